"""Rotation-equivariant group convolution (p4, p4m) and orientation pooling.

Orientation index order is fixed: r = 0, 1, 2, 3 counterclockwise quarter
turns, followed for p4m by the mirrored block (horizontal flip, then r quarter
turns).  Rotation groups require odd square kernels so that every transform
turns the kernel about its exact center pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .counters import MultCounter
from .reference import conv_gather_same
from .scatter import TileConfig, _scatter_forward, tiled_scatter_conv
from .tensor import mirror_plane, rot90_plane

GroupElement = tuple[int, bool]


@dataclass(frozen=True)
class GroupSpec:
    kind: str = "p4"

    def __post_init__(self):
        if self.kind not in ("p4", "p4m"):
            raise ValueError(f"unknown group {self.kind!r}; expected 'p4' or 'p4m'")

    @property
    def size(self) -> int:
        return 4 if self.kind == "p4" else 8

    def elements(self) -> list[GroupElement]:
        rots = [(r, False) for r in range(4)]
        if self.kind == "p4m":
            rots += [(r, True) for r in range(4)]
        return rots


def _as_element(g) -> GroupElement:
    if isinstance(g, tuple):
        r, mirrored = g
        return int(r) % 4, bool(mirrored)
    return int(g) % 4, False


def transform_kernel(w, g) -> np.ndarray:
    """Apply group element ``g`` (an int r, or ``(r, mirrored)``) to every kernel plane."""
    w = np.asarray(w)
    r, mirrored = _as_element(g)
    if r % 2 == 1 and w.shape[-1] != w.shape[-2]:
        raise ValueError(f"cannot rotate non-square kernel of shape {w.shape[-2:]} by 90 degrees")
    if mirrored:
        w = mirror_plane(w)
    return np.ascontiguousarray(rot90_plane(w, r))


def inverse_transform_kernel(w, g) -> np.ndarray:
    """Undo :func:`transform_kernel` for element ``g``."""
    w = np.asarray(w)
    r, mirrored = _as_element(g)
    out = rot90_plane(w, (4 - r) % 4)
    if mirrored:
        out = mirror_plane(out)
    return np.ascontiguousarray(out)


def _check_group_kernel(w: np.ndarray) -> None:
    kh, kw = w.shape[-2:]
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"rotation groups require odd square kernels, got {kh}x{kw}")


@lru_cache(maxsize=None)
def _offset_maps(kernel_size: int, kind: str) -> np.ndarray:
    k = kernel_size
    idx = np.arange(k * k).reshape(k, k)
    maps = np.empty((GroupSpec(kind).size, k, k, 2), dtype=np.intp)
    for gi, g in enumerate(GroupSpec(kind).elements()):
        moved = transform_kernel(idx, g)
        # moved[m', n'] is the source offset that lands on (m', n')
        src = moved.reshape(-1)
        dest = np.stack(np.unravel_index(np.arange(k * k), (k, k)), axis=-1)
        maps[gi].reshape(-1, 2)[src] = dest
    maps.flags.writeable = False
    return maps


def scatter_offset_maps(kernel_size: int, group: GroupSpec) -> np.ndarray:
    """Destination kernel coordinates ``(m', n') = g(m, n)`` for each group element.

    Shape (|G|, K, K, 2); computed once per kernel size and group and cached.
    """
    return _offset_maps(int(kernel_size), group.kind)


def group_conv_gather(x, w, group: GroupSpec, counter: MultCounter | None = None) -> np.ndarray:
    """Stack of same-padded gather convolutions, one per transformed kernel.

    Returns (C_out, |G|, H, W).
    """
    w = np.asarray(w)
    _check_group_kernel(w)
    slices = [conv_gather_same(x, transform_kernel(w, g), counter) for g in group.elements()]
    return np.stack(slices, axis=1)


def group_conv_scatter_reuse(x, w, group: GroupSpec, counter: MultCounter | None = None) -> np.ndarray:
    """Group convolution that computes each channel reduction once.

    For every kernel offset the product ``sum_c X[c] * W[o, c, m, n]`` is
    formed a single time and scattered to all |G| orientation planes through
    the precomputed offset maps.  The multiplication count is that of a single
    orientation.  Returns (C_out, |G|, H, W).
    """
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 3 or w.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ValueError("expected x (C, H, W) and w (C_out, C, K, K) with matching channels")
    _check_group_kernel(w)
    return _scatter_forward(x, w, scatter_offset_maps(w.shape[2], group), counter)


def tiled_group_conv(x, w, group: GroupSpec, cfg: TileConfig, workers: int = 1,
                     pool: str | None = None, counter: MultCounter | None = None) -> np.ndarray:
    """Tiled, reuse-based group convolution with optional in-tile orientation pooling."""
    w = np.asarray(w)
    _check_group_kernel(w)
    return tiled_scatter_conv(x, w, cfg, workers=workers, counter=counter,
                              offset_maps=scatter_offset_maps(w.shape[2], group), pool=pool)


def orientation_pool_avg(f) -> np.ndarray:
    """Per-pixel mean over the orientation axis: (C, R, H, W) -> (C, H, W)."""
    f = np.asarray(f)
    total = f[:, 0]
    for r in range(1, f.shape[1]):
        total = total + f[:, r]
    return total / f.shape[1]


def orientation_pool_max(f) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel max over orientations and the winning index (smallest r on ties)."""
    f = np.asarray(f)
    arg = np.argmax(f, axis=1)
    return np.take_along_axis(f, arg[:, None], axis=1)[:, 0], arg


def subgroup_pool_max(f, group_size: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Max over each contiguous block of ``group_size`` orientations.

    (C, R, H, W) -> (C, R // group_size, H, W) plus the block-local argmax.
    """
    f = np.asarray(f)
    c, n_orient = f.shape[:2]
    if group_size < 1 or n_orient % group_size:
        raise ValueError(f"{n_orient} orientations not divisible by group size {group_size}")
    blocks = f.reshape((c, n_orient // group_size, group_size) + f.shape[2:])
    arg = np.argmax(blocks, axis=2)
    return np.take_along_axis(blocks, arg[:, :, None], axis=2)[:, :, 0], arg
