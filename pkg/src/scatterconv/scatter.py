"""Scatter-dataflow convolution.

Each input pixel is multiplied by the filter weights and the products are
added into neighbouring output positions.  The engine is driven by an
*offset map* sending every kernel offset ``(m, n)`` to a destination offset
``(m', n')``::

    Y[i - m' + K_h//2, j - n' + K_w//2] += X[i, j] * W[m, n]

Iteration covers the full input; writes landing outside the output plane are
dropped, so the output has the input's size.

The plain single-orientation ops use the reversal map
``(m', n') = (K_h-1-m, K_w-1-n)``: every input pixel stamps a copy of the
kernel, in its own layout, around itself.  That is convolution in the
flipped-kernel sense, so ``scatter_conv_multi(X, W)`` equals
``conv_gather_same(X, reverse_kernel(W))``.  Group convolution instead uses
the maps of the transformed kernels, whose identity element reproduces
``conv_gather_same(X, W)``.

For multiple channels the per-pixel channel reduction
``sum_c X[c, i, j] * W[o, c, m, n]`` is one matrix product per kernel offset,
and only its result is scattered.  Orientation-aware callers pass *offset
maps* giving, for each orientation, the destination kernel coordinate of every
source offset ``(m, n)``; the product for an offset is then computed once and
scattered once per orientation.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .counters import MultCounter


def _shift(n: int, d: int) -> tuple[slice, slice] | None:
    """Source/destination slices along an axis of length n for a displacement d."""
    if abs(d) >= n:
        return None
    if d >= 0:
        return slice(0, n - d), slice(d, n)
    return slice(-d, n), slice(0, n + d)


def identity_offset_map(kernel_h: int, kernel_w: int) -> np.ndarray:
    """Offset map of shape (1, K_h, K_w, 2) sending every offset to itself."""
    mm, nn = np.meshgrid(np.arange(kernel_h), np.arange(kernel_w), indexing="ij")
    return np.stack([mm, nn], axis=-1)[None]


def reversal_offset_map(kernel_h: int, kernel_w: int) -> np.ndarray:
    """Offset map of shape (1, K_h, K_w, 2) used by the plain scatter ops."""
    return identity_offset_map(kernel_h, kernel_w)[:, ::-1, ::-1].copy()


def _channel_dot(w_mn: np.ndarray, x: np.ndarray, ordered: bool) -> np.ndarray:
    # w_mn: (C_out, C_in); x: (C_in, ...) -> (C_out, ...)
    if not ordered:
        # a strided weight slice would push matmul off the BLAS path
        w_mn = np.ascontiguousarray(w_mn)
        return (w_mn @ x.reshape(x.shape[0], -1)).reshape((w_mn.shape[0],) + x.shape[1:])
    # Fixed summation order over input channels, independent of the extent of x.
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    acc = w_mn[:, 0][expand] * x[0]
    for c in range(1, x.shape[0]):
        acc = acc + w_mn[:, c][expand] * x[c]
    return acc


def _scatter_forward(x: np.ndarray, w: np.ndarray, offset_maps: np.ndarray,
                     counter: MultCounter | None = None, ordered: bool = False) -> np.ndarray:
    """x: (C_in, *batch, H, W) -> (C_out, R, *batch, H, W)."""
    c_out, c_in, kh, kw = w.shape
    h, wd = x.shape[-2:]
    ch, cw = kh // 2, kw // 2
    n_orient = offset_maps.shape[0]
    dtype = np.result_type(x, w)
    y = np.zeros((c_out, n_orient) + x.shape[1:], dtype=dtype)
    pixels = x.size // c_in
    writes = 0
    for m in range(kh):
        for n in range(kw):
            prod = _channel_dot(w[:, :, m, n], x, ordered)
            if counter is not None:
                counter.note_aux(prod.nbytes)
            for r in range(n_orient):
                mr, nr = offset_maps[r, m, n]
                rows = _shift(h, ch - int(mr))
                cols = _shift(wd, cw - int(nr))
                if rows is None or cols is None:
                    continue
                y[:, r, ..., rows[1], cols[1]] += prod[..., rows[0], cols[0]]
                writes += (rows[0].stop - rows[0].start) * (cols[0].stop - cols[0].start)
    if counter is not None:
        batch = pixels // (h * wd)
        counter.add(mults=kh * kw * c_out * c_in * pixels,
                    adds=kh * kw * c_out * (c_in - 1) * pixels + c_out * batch * writes)
    return y


def _scatter_transposed(delta: np.ndarray, w: np.ndarray, offset_maps: np.ndarray,
                        counter: MultCounter | None = None) -> np.ndarray:
    """Adjoint of :func:`_scatter_forward` with respect to its input.

    delta: (C_out, R, *batch, H, W) -> (C_in, *batch, H, W).  Each upstream
    pixel ``q`` of orientation ``r`` scatters ``sum_o W[o, c, m, n] * delta[o, r, q]``
    to input position ``q + m_r - K//2``.
    """
    c_out, c_in, kh, kw = w.shape
    h, wd = delta.shape[-2:]
    ch, cw = kh // 2, kw // 2
    n_orient = offset_maps.shape[0]
    dx = np.zeros((c_in,) + delta.shape[2:], dtype=np.result_type(delta, w))
    for m in range(kh):
        for n in range(kw):
            prod = _channel_dot(w[:, :, m, n].T, delta, ordered=False)  # (C_in, R, ...)
            if counter is not None:
                counter.note_aux(prod.nbytes)
                counter.add(mults=c_in * delta.size)
            for r in range(n_orient):
                mr, nr = offset_maps[r, m, n]
                rows = _shift(h, int(mr) - ch)
                cols = _shift(wd, int(nr) - cw)
                if rows is None or cols is None:
                    continue
                dx[..., rows[1], cols[1]] += prod[:, r, ..., rows[0], cols[0]]
    return dx


def scatter_conv_single(x, w, counter: MultCounter | None = None) -> np.ndarray:
    """Single-channel scatter convolution of an H x W plane with a K_h x K_w kernel.

    ``Y[i + m - (K_h-1-K_h//2), j + n - (K_w-1-K_w//2)] += X[i, j] * W[m, n]``.
    Every input pixel is multiplied by every kernel weight (H*W*K_h*K_w
    multiplications); products whose destination falls outside the plane are
    discarded.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 2 or w.ndim != 2 or x.size == 0 or w.size == 0:
        raise ValueError("scatter_conv_single expects nonempty 2-d input and kernel")
    h, wd = x.shape
    kh, kw = w.shape
    y = np.zeros((h, wd), dtype=np.result_type(x, w))
    for m in range(kh):
        for n in range(kw):
            prod = x * w[m, n]
            rows = _shift(h, kh // 2 - (kh - 1 - m))
            cols = _shift(wd, kw // 2 - (kw - 1 - n))
            if rows is not None and cols is not None:
                y[rows[1], cols[1]] += prod[rows[0], cols[0]]
                if counter is not None:
                    counter.add(adds=(rows[0].stop - rows[0].start) * (cols[0].stop - cols[0].start))
    if counter is not None:
        counter.add(mults=h * wd * kh * kw)
        counter.note_aux(x.nbytes)
    return y


def scatter_conv_multi(x, w, counter: MultCounter | None = None, ordered: bool = False) -> np.ndarray:
    """Multi-channel scatter convolution, (C_in, H, W) -> (C_out, H, W).

    The channel reduction uses BLAS by default; ``ordered=True`` switches to
    the fixed summation order of :func:`tiled_scatter_conv`, making the two
    bit-identical.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ValueError("expected x of shape (C, H, W) and w of shape (C_out, C_in, K_h, K_w)")
    if x.shape[0] != w.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]} channels, filters expect {w.shape[1]}"
        )
    maps = reversal_offset_map(w.shape[2], w.shape[3])
    return _scatter_forward(x, w, maps, counter, ordered=ordered)[:, 0]


def scatter_index_trace(height: int, width: int, kernel_h: int, kernel_w: int,
                        offset_map: np.ndarray | None = None) -> Iterator[tuple[int, int, int, int, int, int]]:
    """Yield ``(i, j, m, n, x, y)`` for every in-range write of the scatter loop nest.

    ``offset_map`` (K_h, K_w, 2) gives the destination offset of each kernel
    offset; the default is the reversal map of the plain scatter ops.
    """
    if offset_map is None:
        offset_map = reversal_offset_map(kernel_h, kernel_w)[0]
    ch, cw = kernel_h // 2, kernel_w // 2
    for i in range(height):
        for j in range(width):
            for m in range(kernel_h):
                for n in range(kernel_w):
                    mr, nr = map(int, offset_map[m, n])
                    tx, ty = i - mr + ch, j - nr + cw
                    if 0 <= tx < height and 0 <= ty < width:
                        yield i, j, m, n, tx, ty


@dataclass(frozen=True)
class TileConfig:
    tile_h: int
    tile_w: int
    halo: int

    def __post_init__(self):
        if self.tile_h < 1 or self.tile_w < 1:
            raise ValueError("tile sizes must be >= 1")
        if self.halo < 0:
            raise ValueError("halo must be >= 0")

    @classmethod
    def for_kernel(cls, kernel_size: int, tile_h: int, tile_w: int | None = None,
                   max_pool: bool = False) -> "TileConfig":
        halo = kernel_size // 2 + (1 if max_pool else 0)
        return cls(tile_h, tile_h if tile_w is None else tile_w, halo)

    def validate(self, kernel_size: int, max_pool: bool = False) -> None:
        expected = kernel_size // 2 + (1 if max_pool else 0)
        if self.halo != expected:
            mode = "max-pool" if max_pool else "plain"
            raise ValueError(
                f"invalid halo {self.halo} for kernel {kernel_size} in {mode} mode (expected {expected})"
            )


def _pool_orientations(acc: np.ndarray, pool: str | None) -> np.ndarray:
    if pool is None:
        return acc
    if pool == "avg":
        total = acc[:, 0]
        for r in range(1, acc.shape[1]):
            total = total + acc[:, r]
        return total / acc.shape[1]
    if pool == "max":
        return acc.max(axis=1)
    raise ValueError(f"unknown pool {pool!r}")


def tiled_scatter_conv(x, w, cfg: TileConfig, workers: int = 1,
                       counter: MultCounter | None = None,
                       offset_maps: np.ndarray | None = None,
                       pool: str | None = None) -> np.ndarray:
    """Scatter convolution over output tiles with private, halo-extended accumulators.

    Each tile reads its input region (tile plus ``cfg.halo`` on every side),
    scatters into a region-sized private accumulator and keeps only the
    central, owned part.  Tiles are disjoint in the output, so workers never
    contend.  The channel reduction runs in a fixed order, so the result is
    bit-identical for every tile size and worker count.

    With ``offset_maps`` the result has an orientation axis, optionally pooled
    in-tile with ``pool="avg"`` or ``"max"``.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ValueError("expected x (C, H, W) and w (C_out, C, K_h, K_w) with matching channels")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    kh, kw = w.shape[2:]
    cfg.validate(max(kh, kw), max_pool=(pool == "max"))
    grouped = offset_maps is not None
    maps = reversal_offset_map(kh, kw) if offset_maps is None else np.asarray(offset_maps)
    if pool is not None and not grouped:
        raise ValueError("orientation pooling requires offset_maps")

    c_out = w.shape[0]
    h, wd = x.shape[1:]
    n_orient = maps.shape[0]
    dtype = np.result_type(x, w)
    if pool is not None:
        out = np.zeros((c_out, h, wd), dtype=dtype)
    else:
        out = np.zeros((c_out, n_orient, h, wd), dtype=dtype)

    tiles = [(t0, min(t0 + cfg.tile_h, h), s0, min(s0 + cfg.tile_w, wd))
             for t0 in range(0, h, cfg.tile_h) for s0 in range(0, wd, cfg.tile_w)]

    def run(tile):
        t0, t1, s0, s1 = tile
        r0, r1 = max(0, t0 - cfg.halo), min(h, t1 + cfg.halo)
        q0, q1 = max(0, s0 - cfg.halo), min(wd, s1 + cfg.halo)
        local = MultCounter()
        acc = _scatter_forward(x[:, r0:r1, q0:q1], w, maps, local, ordered=True)
        local.note_aux(acc.nbytes)
        central = _pool_orientations(acc[:, :, t0 - r0:t1 - r0, s0 - q0:s1 - q0], pool)
        out[..., t0:t1, s0:s1] = central
        return local

    if workers == 1:
        locals_ = [run(t) for t in tiles]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            locals_ = list(pool_exec.map(run, tiles))
    if counter is not None:
        for lc in locals_:
            counter.add(lc.scalar_multiplications, lc.scalar_additions)
            counter.note_aux(lc.peak_aux_bytes)
    if not grouped:
        return out[:, 0]
    return out


def phase_parallel_scatter(x, w, workers: int = 2, offset_maps: np.ndarray | None = None,
                           counter: MultCounter | None = None) -> np.ndarray:
    """Scatter with one parallel phase per kernel offset.

    Workers own horizontal bands of input rows.  Within a phase every worker
    multiplies by the same weight, so for each orientation the destination
    rows are a shifted copy of the worker's band and no two workers write the
    same element.  Orientation planes are disjoint too, so a single barrier
    closes each phase however many orientations are written;
    ``counter.synchronizations`` records the barrier count.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ValueError("expected x (C, H, W) and w (C_out, C, K_h, K_w) with matching channels")
    c_out, c_in, kh, kw = w.shape
    h, wd = x.shape[1:]
    maps = reversal_offset_map(kh, kw) if offset_maps is None else np.asarray(offset_maps)
    n_orient = maps.shape[0]
    workers = max(1, min(workers, h))
    bands = [b for b in np.array_split(np.arange(h), workers) if b.size]
    workers = len(bands)
    y = np.zeros((c_out, n_orient, h, wd), dtype=np.result_type(x, w))
    barrier = threading.Barrier(workers)
    ch, cw = kh // 2, kw // 2

    def run(band: np.ndarray) -> None:
        b0, b1 = int(band[0]), int(band[-1]) + 1
        for m in range(kh):
            for n in range(kw):
                prod = _channel_dot(w[:, :, m, n], x[:, b0:b1], ordered=True)
                for r in range(n_orient):
                    mr, nr = maps[r, m, n]
                    d = ch - int(mr)
                    lo, hi = max(b0, -d), min(b1, h - d)
                    cols = _shift(wd, cw - int(nr))
                    if lo < hi and cols is not None:
                        y[:, r, lo + d:hi + d, cols[1]] += prod[:, lo - b0:hi - b0, cols[0]]
                barrier.wait()

    if workers == 1:
        run(bands[0])
    else:
        threads = [threading.Thread(target=run, args=(b,)) for b in bands]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if counter is not None:
        counter.add(mults=kh * kw * c_out * c_in * h * wd)
        counter.note_aux(c_out * h * wd * y.itemsize)
        counter.synchronizations += kh * kw
    return y if offset_maps is not None else y[:, 0]
