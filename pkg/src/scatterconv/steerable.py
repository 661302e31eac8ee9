"""Steerable filters for arbitrary-angle rotation-invariant convolution.

A filter at angle ``theta`` is ``sin(theta) * f_x + cos(theta) * f_y``, so
``theta = 0`` gives ``f_y`` and angles are measured counterclockwise.  Only
first-quadrant angles are steered; the other three quadrants are exact
90-degree turns of those kernels, which lets a bank of N orientations be
evaluated as N/4 p4 group convolutions.

Bank order is base-angle major: index ``4 * b + r`` holds the kernel for
``theta_b + r * pi / 2``, so every contiguous block of four is one p4 orbit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .counters import MultCounter
from .group import GroupSpec, group_conv_scatter_reuse, transform_kernel


@dataclass(frozen=True)
class SteerableBasis:
    f_x: np.ndarray
    f_y: np.ndarray

    def __post_init__(self):
        fx = np.asarray(self.f_x)
        fy = np.asarray(self.f_y)
        if fx.shape != fy.shape:
            raise ValueError(f"basis shapes differ: {fx.shape} vs {fy.shape}")
        if fx.ndim != 4:
            raise ValueError("basis filters must be (C_out, C_in, K, K) banks")
        k = fx.shape[-1]
        if fx.shape[-2] != k or k % 2 == 0:
            raise ValueError(f"basis kernels must be odd and square, got {fx.shape[-2:]}")
        object.__setattr__(self, "f_x", fx)
        object.__setattr__(self, "f_y", fy)


@dataclass(frozen=True)
class OrientationSet:
    count: int

    def __post_init__(self):
        if self.count < 4 or self.count % 4:
            raise ValueError(f"orientation count must be a positive multiple of 4, got {self.count}")

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.count) * (2 * math.pi / self.count)

    @property
    def base_angles(self) -> np.ndarray:
        return self.angles[: self.count // 4]


@dataclass(frozen=True)
class BankTag:
    base_angle: float
    quadrant: int

    @property
    def angle(self) -> float:
        return self.base_angle + self.quadrant * math.pi / 2


def steer(basis: SteerableBasis, theta: float) -> np.ndarray:
    return math.sin(theta) * basis.f_x + math.cos(theta) * basis.f_y


def build_orientation_bank(basis: SteerableBasis, n: int) -> tuple[list[np.ndarray], list[BankTag]]:
    """Kernels for ``n`` evenly spaced angles, steering only the first quadrant."""
    orient = OrientationSet(n)
    bank: list[np.ndarray] = []
    tags: list[BankTag] = []
    for theta in orient.base_angles:
        base = steer(basis, float(theta))
        for r in range(4):
            bank.append(base if r == 0 else transform_kernel(base, r))
            tags.append(BankTag(float(theta), r))
    return bank, tags


def steered_group_conv(x, basis: SteerableBasis, n: int,
                       counter: MultCounter | None = None) -> np.ndarray:
    """Convolve with all ``n`` orientations; one reuse-based p4 pass per base angle.

    Returns (C_out, n, H, W) in bank order.
    """
    g = GroupSpec("p4")
    slices = [group_conv_scatter_reuse(x, steer(basis, float(t)), g, counter)
              for t in OrientationSet(n).base_angles]
    return np.concatenate(slices, axis=1)


def steered_basis_grads(base_grads, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chain base-kernel gradients (one per base angle) through the steering map."""
    thetas = OrientationSet(n).base_angles
    if len(base_grads) != len(thetas):
        raise ValueError(f"expected {len(thetas)} base gradients, got {len(base_grads)}")
    d_fx = sum(math.sin(t) * g for t, g in zip(thetas, base_grads))
    d_fy = sum(math.cos(t) * g for t, g in zip(thetas, base_grads))
    return d_fx, d_fy


def gaussian_derivative_basis(kernel_size: int, sigma: float, out_channels: int = 1,
                              in_channels: int = 1) -> SteerableBasis:
    """Unit-norm first-order Gaussian derivatives on a centered K x K grid.

    ``x`` runs along columns and ``y`` down the rows, which makes the pair
    covariant under counterclockwise quarter turns:
    ``rot90(f_x) == -f_y`` and ``rot90(f_y) == f_x``.
    """
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise ValueError("kernel_size must be odd")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    c = kernel_size // 2
    coords = np.arange(kernel_size) - c
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    g = np.exp(-(xx ** 2 + yy ** 2) / (2 * sigma ** 2))
    fx = -xx * g
    fx = fx / np.linalg.norm(fx)
    # -yy * g is exactly the negated quarter turn of -xx * g on this grid
    fy = -np.rot90(fx)
    shape = (out_channels, in_channels, kernel_size, kernel_size)
    return SteerableBasis(np.broadcast_to(fx, shape).copy(), np.broadcast_to(fy, shape).copy())


def _per_filter(w: np.ndarray) -> np.ndarray:
    return w.reshape(w.shape[0], -1)


def loss_mag(basis: SteerableBasis) -> float:
    nx = np.linalg.norm(_per_filter(basis.f_x), axis=1)
    ny = np.linalg.norm(_per_filter(basis.f_y), axis=1)
    return float(np.mean((nx - ny) ** 2))


def loss_mag_grad(basis: SteerableBasis) -> tuple[np.ndarray, np.ndarray]:
    wx, wy = _per_filter(basis.f_x), _per_filter(basis.f_y)
    nx = np.linalg.norm(wx, axis=1, keepdims=True)
    ny = np.linalg.norm(wy, axis=1, keepdims=True)
    coef = 2.0 * (nx - ny) / wx.shape[0]
    gx = coef * np.divide(wx, nx, out=np.zeros_like(wx), where=nx > 0)
    gy = -coef * np.divide(wy, ny, out=np.zeros_like(wy), where=ny > 0)
    return gx.reshape(basis.f_x.shape), gy.reshape(basis.f_y.shape)


def loss_orth(basis: SteerableBasis, eps: float = 1e-8) -> float:
    if eps <= 0:
        raise ValueError("eps must be positive")
    wx, wy = _per_filter(basis.f_x), _per_filter(basis.f_y)
    dot = np.sum(wx * wy, axis=1)
    denom = np.linalg.norm(wx, axis=1) * np.linalg.norm(wy, axis=1) + eps
    return float(np.mean((dot / denom) ** 2))


def loss_orth_grad(basis: SteerableBasis, eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    # s = <x, y> / (|x||y| + eps); d s/dx = y / D - <x, y> |y| x / (|x| D^2)
    if eps <= 0:
        raise ValueError("eps must be positive")
    wx, wy = _per_filter(basis.f_x), _per_filter(basis.f_y)
    dot = np.sum(wx * wy, axis=1, keepdims=True)
    nx = np.linalg.norm(wx, axis=1, keepdims=True)
    ny = np.linalg.norm(wy, axis=1, keepdims=True)
    denom = nx * ny + eps
    s = dot / denom
    ux = np.divide(wx, nx, out=np.zeros_like(wx), where=nx > 0)
    uy = np.divide(wy, ny, out=np.zeros_like(wy), where=ny > 0)
    ds_dx = wy / denom - dot * ny * ux / denom ** 2
    ds_dy = wx / denom - dot * nx * uy / denom ** 2
    coef = 2.0 * s / wx.shape[0]
    return (coef * ds_dx).reshape(basis.f_x.shape), (coef * ds_dy).reshape(basis.f_y.shape)


def total_loss(ce: float, basis: SteerableBasis | None, lambda_mag: float = 0.1,
               lambda_orth: float = 0.1, eps: float = 1e-8) -> float:
    if lambda_mag < 0 or lambda_orth < 0:
        raise ValueError("regularization weights must be nonnegative")
    if basis is None:
        return float(ce)
    return float(ce) + lambda_mag * loss_mag(basis) + lambda_orth * loss_orth(basis, eps)


def regularizer_grads(basis: SteerableBasis, lambda_mag: float = 0.1, lambda_orth: float = 0.1,
                      eps: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    mx, my = loss_mag_grad(basis)
    ox, oy = loss_orth_grad(basis, eps)
    return lambda_mag * mx + lambda_orth * ox, lambda_mag * my + lambda_orth * oy
