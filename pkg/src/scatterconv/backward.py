"""Gradients of the rotation-invariant layer.

The forward layer is ``Y[:, r] = conv_same(X, g_r(W))`` followed by orientation
pooling.  Same-size zero padding changes the index ranges of the textbook
valid-convolution gradients: an input pixel ``p`` feeds output ``p - i + K//2``
and the weight gradient correlates the zero-padded input with the upstream
gradient.  Every routine here is checked against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .counters import MultCounter
from .group import (GroupSpec, _check_group_kernel, group_conv_scatter_reuse,
                    inverse_transform_kernel, orientation_pool_avg, orientation_pool_max,
                    scatter_offset_maps, transform_kernel)
from .reference import conv_gather_same, pad_same
from .scatter import _scatter_transposed, identity_offset_map
from .tensor import reverse_kernel


@dataclass
class GradBundle:
    d_input: np.ndarray
    d_weights: np.ndarray
    per_rotation_d_weights: list[np.ndarray] = field(default_factory=list)


def pool_backward_avg(g, orientations: int) -> np.ndarray:
    """(C, H, W) upstream gradient -> (C, R, H, W), each slice ``g / R``."""
    if orientations <= 0:
        raise ValueError("orientations must be >= 1")
    g = np.asarray(g)
    return np.repeat((g / orientations)[:, None], orientations, axis=1)


def pool_backward_max(g, argmax, orientations: int) -> np.ndarray:
    """Route ``g`` to the winning orientation recorded by the forward pass."""
    g = np.asarray(g)
    argmax = np.asarray(argmax)
    if argmax.shape != g.shape:
        raise ValueError(f"argmax shape {argmax.shape} != gradient shape {g.shape}")
    if orientations <= 0:
        raise ValueError("orientations must be >= 1")
    mask = np.arange(orientations).reshape((1, -1) + (1,) * (g.ndim - 1)) == argmax[:, None]
    return np.where(mask, g[:, None], 0.0).astype(g.dtype, copy=False)


def subgroup_pool_backward_max(g, argmax, group_size: int = 4) -> np.ndarray:
    """Inverse routing of :func:`~scatterconv.group.subgroup_pool_max`.

    g, argmax: (C, B, ...) -> (C, B * group_size, ...).
    """
    g = np.asarray(g)
    argmax = np.asarray(argmax)
    if argmax.shape != g.shape:
        raise ValueError(f"argmax shape {argmax.shape} != gradient shape {g.shape}")
    mask = np.arange(group_size).reshape((1, 1, -1) + (1,) * (g.ndim - 2)) == argmax[:, :, None]
    out = np.where(mask, g[:, :, None], 0.0).astype(g.dtype, copy=False)
    return out.reshape((g.shape[0], g.shape[1] * group_size) + g.shape[2:])


def _maps_for(w: np.ndarray, group: GroupSpec | None) -> np.ndarray:
    if group is None:
        return identity_offset_map(w.shape[2], w.shape[3])
    _check_group_kernel(w)
    return scatter_offset_maps(w.shape[2], group)


def conv_backward_input(delta, w, group: GroupSpec | None = None,
                        counter: MultCounter | None = None) -> np.ndarray:
    """Input gradient summed over all orientation branches.

    delta: (C_out, R, *batch, H, W) upstream gradient w.r.t. the oriented
    output; w: base kernel.  With ``group=None`` R must be 1 and any kernel
    shape is accepted.  Implemented with the transposed scatter kernel.
    """
    delta = np.asarray(delta)
    w = np.asarray(w)
    maps = _maps_for(w, group)
    if delta.ndim < 4 or delta.shape[0] != w.shape[0] or delta.shape[1] != maps.shape[0]:
        raise ValueError(
            f"upstream gradient shape {delta.shape} inconsistent with kernel {w.shape} "
            f"and {maps.shape[0]} orientations"
        )
    return _scatter_transposed(delta, w, maps, counter)


def conv_backward_input_gather(delta, w, group: GroupSpec | None = None) -> np.ndarray:
    """Gather-based oracle for :func:`conv_backward_input` (odd kernels only).

    Uses ``dX = sum_r conv_same(delta_r, reverse(g_r(W))^T)``.
    """
    delta = np.asarray(delta)
    w = np.asarray(w)
    if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ValueError("gather oracle needs odd kernels")
    elements = [(0, False)] if group is None else group.elements()
    total = None
    for r, g in enumerate(elements):
        wt = reverse_kernel(transform_kernel(w, g)).transpose(1, 0, 2, 3)
        part = conv_gather_same(delta[:, r], wt)
        total = part if total is None else total + part
    return total


def conv_backward_weight(delta, x, kernel_h: int, kernel_w: int | None = None,
                         group: GroupSpec | None = None) -> list[np.ndarray]:
    """Per-orientation kernel gradients ``dL/dW^(r)``.

    delta: (C_out, R, *batch, H, W); x: (C_in, *batch, H, W).  Returns a list of
    R arrays of shape (C_out, C_in, K_h, K_w).
    """
    delta = np.asarray(delta)
    x = np.asarray(x)
    kernel_w = kernel_h if kernel_w is None else kernel_w
    if delta.shape[2:] != x.shape[1:]:
        raise ValueError(f"upstream gradient {delta.shape} does not match input {x.shape}")
    if group is not None and delta.shape[1] != group.size:
        raise ValueError(f"expected {group.size} orientations, got {delta.shape[1]}")
    h, wd = x.shape[-2:]
    xp = pad_same(x, kernel_h, kernel_w)
    spatial = tuple(range(2, delta.ndim))
    x_axes = tuple(range(1, x.ndim))
    dw = np.empty((delta.shape[1], delta.shape[0], x.shape[0], kernel_h, kernel_w),
                  dtype=np.result_type(delta, x))
    for i in range(kernel_h):
        for j in range(kernel_w):
            window = xp[..., i:i + h, j:j + wd]
            # (C_out, R, C_in) -> (R, C_out, C_in)
            dw[:, :, :, i, j] = np.tensordot(delta, window, axes=(spatial, x_axes)).transpose(1, 0, 2)
    return list(dw)


def base_kernel_grad(per_rotation_grads, group: GroupSpec | None = None) -> np.ndarray:
    """Map each rotated-kernel gradient back to the base orientation and sum.

    The group is inferred from the number of gradients (1, 4 or 8) when not
    given.
    """
    grads = [np.asarray(g) for g in per_rotation_grads]
    if group is None:
        if len(grads) == 1:
            return grads[0].copy()
        group = {4: GroupSpec("p4"), 8: GroupSpec("p4m")}.get(len(grads))
        if group is None:
            raise ValueError(f"cannot infer group from {len(grads)} gradients")
    if len(grads) != group.size:
        raise ValueError(f"expected {group.size} gradients, got {len(grads)}")
    _check_group_kernel(grads[0])
    total = np.zeros_like(grads[0])
    for g, dw in zip(group.elements(), grads):
        total = total + inverse_transform_kernel(dw, g)
    return total


def rotation_invariant_layer_grads(x, w, group: GroupSpec, upstream, pool: str = "avg") -> GradBundle:
    """Gradients of ``pool(group_conv(x, w))`` for a pooled upstream gradient."""
    x = np.asarray(x)
    w = np.asarray(w)
    n = group.size
    if pool == "avg":
        delta = pool_backward_avg(upstream, n)
    elif pool == "max":
        _, arg = orientation_pool_max(group_conv_scatter_reuse(x, w, group))
        delta = pool_backward_max(upstream, arg, n)
    else:
        raise ValueError(f"unknown pool {pool!r}")
    per_rot = conv_backward_weight(delta, x, w.shape[2], w.shape[3], group)
    return GradBundle(
        d_input=conv_backward_input(delta, w, group),
        d_weights=base_kernel_grad(per_rot, group),
        per_rotation_d_weights=per_rot,
    )


def rotation_invariant_layer(x, w, group: GroupSpec, pool: str = "avg") -> np.ndarray:
    f = group_conv_scatter_reuse(x, w, group)
    if pool == "avg":
        return orientation_pool_avg(f)
    return orientation_pool_max(f)[0]


def finite_diff_check(f: Callable[[np.ndarray], float], point, grad, step: float = 1e-5,
                      n_samples: int | None = None, rng: np.random.Generator | None = None,
                      floor: float = 1e-7) -> float:
    """Relative error between ``grad`` and central differences of ``f``.

    Coordinates are sampled without replacement when ``n_samples`` is given.
    The error is norm-wise over the checked coordinates,
    ``||a - n|| / max(||a||, ||n||)``: an elementwise ratio on entries near
    zero would measure the round-off of the difference quotient rather than
    the gradient.  When both norms are below ``floor`` the absolute norm of
    the difference is returned instead.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.array(point, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != point.shape:
        raise ValueError(f"gradient shape {grad.shape} != point shape {point.shape}")
    flat = point.reshape(-1)
    coords = np.arange(flat.size)
    if n_samples is not None and n_samples < flat.size:
        rng = np.random.default_rng(0) if rng is None else rng
        coords = rng.choice(flat.size, size=n_samples, replace=False)
    num = np.empty(coords.size)
    for t, k in enumerate(coords):
        orig = flat[k]
        flat[k] = orig + step
        fp = f(point)
        flat[k] = orig - step
        fm = f(point)
        flat[k] = orig
        num[t] = (fp - fm) / (2 * step)
    ana = grad.reshape(-1)[coords]
    diff = float(np.linalg.norm(ana - num))
    scale = max(float(np.linalg.norm(ana)), float(np.linalg.norm(num)))
    return diff / scale if scale > floor else diff
