"""Gather-style and im2col/matmul convolutions.

These are the oracles for everything scatter-based.  All of them compute
cross-correlation exactly as written in the standard sliding-window form,
``Y[o, h, w] = sum_{c, i, j} W[o, c, i, j] * X[c, h + i, w + j]``; kernels are
never flipped.
"""

from __future__ import annotations

import numpy as np

from .counters import MultCounter


def _check_operands(x: np.ndarray, w: np.ndarray) -> None:
    if w.ndim != 4:
        raise ValueError(f"filter bank must be 4-d, got shape {w.shape}")
    if x.ndim < 3:
        raise ValueError(f"input must be (C, H, W), got shape {x.shape}")
    if x.shape[0] != w.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.shape[0]} channels, filters expect {w.shape[1]}"
        )


def _gather_valid(x: np.ndarray, w: np.ndarray, counter: MultCounter | None) -> np.ndarray:
    # x: (C_in, *batch, H, W); one tensordot per kernel tap
    c_out, _, kh, kw = w.shape
    h, wd = x.shape[-2:]
    ho, wo = h - kh + 1, wd - kw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than input {h}x{wd}")
    dtype = np.result_type(x, w)
    y = np.zeros((c_out,) + x.shape[1:-2] + (ho, wo), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            y += np.tensordot(w[:, :, i, j], x[:, ..., i:i + ho, j:j + wo], axes=(1, 0))
    if counter is not None:
        n_out = y.size
        counter.add(mults=n_out * w.shape[1] * kh * kw, adds=n_out * (w.shape[1] * kh * kw - 1))
    return y


def same_padding(kh: int, kw: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """(before, after) zero padding for the centered ``floor(K/2)`` convention."""
    return (kh // 2, kh - 1 - kh // 2), (kw // 2, kw - 1 - kw // 2)


def pad_same(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    ph, pw = same_padding(kh, kw)
    pad = [(0, 0)] * (x.ndim - 2) + [ph, pw]
    return np.pad(x, pad)


def conv_gather_valid(x, w, counter: MultCounter | None = None) -> np.ndarray:
    x = np.asarray(x)
    w = np.asarray(w)
    _check_operands(x, w)
    return _gather_valid(x, w, counter)


def conv_gather_same(x, w, counter: MultCounter | None = None) -> np.ndarray:
    """Zero-padded, same-size gather convolution centered at ``(K_h // 2, K_w // 2)``.

    ``Y[o, p, q] = sum W[o, c, i, j] * X[c, p + i - K_h//2, q + j - K_w//2]`` with
    out-of-range reads as zero.  Even kernels are allowed; their center is
    biased toward the top-left.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    _check_operands(x, w)
    return _gather_valid(pad_same(x, w.shape[2], w.shape[3]), w, counter)


def im2col(x, kernel_h: int, kernel_w: int) -> np.ndarray:
    """Lower ``x`` to a (C_in*K_h*K_w) x (H'*W') matrix.

    Row ``k = c*K_h*K_w + i*K_w + j`` and column ``t = h*W' + w`` hold
    ``x[c, h + i, w + j]``.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"im2col expects (C, H, W), got shape {x.shape}")
    c, h, wd = x.shape
    ho, wo = h - kernel_h + 1, wd - kernel_w + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kernel_h}x{kernel_w} larger than input {h}x{wd}")
    cols = np.empty((c, kernel_h, kernel_w, ho * wo), dtype=x.dtype)
    for i in range(kernel_h):
        for j in range(kernel_w):
            cols[:, i, j, :] = x[:, i:i + ho, j:j + wo].reshape(c, -1)
    return cols.reshape(c * kernel_h * kernel_w, ho * wo)


def conv_via_matmul(x, w, padding: str = "valid", counter: MultCounter | None = None) -> np.ndarray:
    """Convolution as ``W_row @ X_col`` over the lowered input.

    ``padding="same"`` zero-pads first so the result matches
    :func:`conv_gather_same`.
    """
    x = np.asarray(x)
    w = np.asarray(w)
    _check_operands(x, w)
    if x.ndim != 3:
        raise ValueError("conv_via_matmul expects a single (C, H, W) input")
    c_out, c_in, kh, kw = w.shape
    if padding == "same":
        x = pad_same(x, kh, kw)
    elif padding != "valid":
        raise ValueError(f"unknown padding {padding!r}")
    ho, wo = x.shape[1] - kh + 1, x.shape[2] - kw + 1
    x_col = im2col(x, kh, kw)
    w_row = w.reshape(c_out, c_in * kh * kw)
    if counter is not None:
        counter.note_aux(x_col.nbytes)
        counter.add(mults=c_out * x_col.shape[0] * x_col.shape[1],
                    adds=c_out * (x_col.shape[0] - 1) * x_col.shape[1])
    return (w_row @ x_col).reshape(c_out, ho, wo)
