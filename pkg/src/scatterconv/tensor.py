"""Dense containers, plane transforms and memory-layout packers.

All convolution routines in this package operate on plain ``numpy`` arrays in
channel-major order.  The container classes below wrap such arrays with shape
validation and bounds-checked element access; they implement ``__array__`` so
they can be passed anywhere an array is expected.

Two precisions are supported: ``float64`` for correctness and gradient checks
and ``float32`` for benchmarking.  Routines preserve the dtype they are given.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


def _as_float_array(values, ndim: int, name: str, dtype=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} expects a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


class _Dense:
    """Shared behaviour of the fixed-rank containers."""

    data: np.ndarray

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def flat(self) -> np.ndarray:
        """Row-major flat view of the stored values."""
        return self.data.reshape(-1)

    def at(self, *index: int) -> float:
        if len(index) != self.data.ndim:
            raise IndexError(f"expected {self.data.ndim} indices, got {len(index)}")
        for i, n in zip(index, self.data.shape):
            if not 0 <= i < n:
                raise IndexError(f"index {index} out of range for shape {self.data.shape}")
        return float(self.data[index])

    def copy_data(self) -> np.ndarray:
        """Writable copy of the underlying array."""
        return np.array(self.data, copy=True)


@dataclass(frozen=True, eq=False)
class Tensor3(_Dense):
    """C x H x W feature map."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_float_array(self.data, 3, "Tensor3"))

    @classmethod
    def from_flat(cls, channels: int, height: int, width: int, values, dtype=np.float64) -> "Tensor3":
        values = np.asarray(values, dtype=dtype)
        if values.size != channels * height * width:
            raise ValueError(
                f"data length {values.size} != {channels}*{height}*{width}"
            )
        return cls(values.reshape(channels, height, width))

    @classmethod
    def zeros(cls, channels: int, height: int, width: int, dtype=np.float64) -> "Tensor3":
        return cls(np.zeros((channels, height, width), dtype=dtype))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class FilterBank(_Dense):
    """C_out x C_in x K_h x K_w kernel weights."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.data, 4, "FilterBank")
        if arr.shape[2] < 1 or arr.shape[3] < 1:
            raise ValueError("kernel_h and kernel_w must be >= 1")
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, out_channels: int, in_channels: int, kernel_h: int, kernel_w: int,
                  values, dtype=np.float64) -> "FilterBank":
        values = np.asarray(values, dtype=dtype)
        n = out_channels * in_channels * kernel_h * kernel_w
        if values.size != n:
            raise ValueError(f"data length {values.size} != {n}")
        return cls(values.reshape(out_channels, in_channels, kernel_h, kernel_w))

    @property
    def out_channels(self) -> int:
        return self.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.data.shape[1]

    @property
    def kernel_h(self) -> int:
        return self.data.shape[2]

    @property
    def kernel_w(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True, eq=False)
class OrientedFeature(_Dense):
    """C_out x R x H x W rotation-equivariant feature stack."""

    data: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.data, 4, "OrientedFeature")
        if arr.shape[1] < 1:
            raise ValueError("orientations must be >= 1")
        object.__setattr__(self, "data", arr)

    @property
    def out_channels(self) -> int:
        return self.data.shape[0]

    @property
    def orientations(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True, eq=False)
class MatrixRM(_Dense):
    """Row-major rows x cols matrix."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_float_array(self.data, 2, "MatrixRM"))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def rot90_plane(plane, quarter_turns: int) -> np.ndarray:
    """Rotate the trailing two axes counterclockwise by ``quarter_turns`` * 90 degrees.

    For one quarter turn on an M x N grid the result is N x M with
    ``out[i, j] == in[j, N - 1 - i]``.  Leading axes are carried along, so a
    whole filter bank can be rotated plane-by-plane in one call.
    """
    arr = np.asarray(plane)
    return np.rot90(arr, k=quarter_turns % 4, axes=(-2, -1))


def mirror_plane(plane) -> np.ndarray:
    """Horizontal flip of the trailing two axes: ``out[i, j] == in[i, N - 1 - j]``."""
    return np.asarray(plane)[..., ::-1]


def reverse_kernel(kernel) -> np.ndarray:
    """Index-reverse both spatial axes (a 180 degree turn for square kernels)."""
    return np.asarray(kernel)[..., ::-1, ::-1]


def pack_cnhw(batch: Sequence) -> np.ndarray:
    """Pack N tensors of shape (C, H, W) into a C x (N*H*W) matrix.

    Row index is the channel, column index enumerates (n, h, w) with w fastest.
    """
    arrays = [np.asarray(x) for x in batch]
    if not arrays:
        raise ValueError("empty batch")
    shape = arrays[0].shape
    if len(shape) != 3:
        raise ValueError(f"expected (C, H, W) tensors, got shape {shape}")
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"shape mismatch in batch: {a.shape} vs {shape}")
    c = shape[0]
    return np.stack(arrays, axis=1).reshape(c, -1)


def unpack_cnhw(matrix, n: int, height: int, width: int) -> list[np.ndarray]:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[1] != n * height * width:
        raise ValueError(f"matrix shape {m.shape} incompatible with n={n}, h={height}, w={width}")
    stacked = m.reshape(m.shape[0], n, height, width)
    return [np.ascontiguousarray(stacked[:, i]) for i in range(n)]


def pack_nhwc(bank) -> np.ndarray:
    """Pack a (C_out, C_in, K_h, K_w) bank into a C_out x (K_h*K_w*C_in) matrix.

    Row index is the filter, column index enumerates (h, w, c) with c fastest.
    """
    w = np.asarray(bank)
    if w.ndim != 4:
        raise ValueError(f"expected a 4-d filter bank, got shape {w.shape}")
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(w.shape[0], -1)


def unpack_nhwc(matrix, in_channels: int, kernel_h: int, kernel_w: int) -> np.ndarray:
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[1] != in_channels * kernel_h * kernel_w:
        raise ValueError(f"matrix shape {m.shape} incompatible with bank dims")
    return np.ascontiguousarray(
        m.reshape(m.shape[0], kernel_h, kernel_w, in_channels).transpose(0, 3, 1, 2)
    )


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b
