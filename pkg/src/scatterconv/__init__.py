"""Scatter-style convolution with group reuse for rotation-invariant CNNs.

numpy reference implementations of gather, im2col and scatter dataflows, p4/p4m
group convolution that computes each input-kernel product once, exact backward
passes, steerable filter banks, a benchmark sweep and a micro training demo.
"""

from .counters import MultCounter
from .reference import conv_gather_same, conv_gather_valid, conv_via_matmul, im2col
from .scatter import (
    TileConfig,
    phase_parallel_scatter,
    scatter_conv_multi,
    scatter_conv_single,
    scatter_index_trace,
    tiled_scatter_conv,
)
from .group import (
    GroupSpec,
    group_conv_gather,
    group_conv_scatter_reuse,
    orientation_pool_avg,
    orientation_pool_max,
    subgroup_pool_max,
    tiled_group_conv,
    transform_kernel,
)
from .backward import (
    base_kernel_grad,
    conv_backward_input,
    conv_backward_weight,
    finite_diff_check,
)
from .steerable import (
    SteerableBasis,
    build_orientation_bank,
    gaussian_derivative_basis,
    loss_mag,
    loss_orth,
    steer,
)

__version__ = "0.1.0"

__all__ = [
    "MultCounter",
    "conv_gather_same", "conv_gather_valid", "conv_via_matmul", "im2col",
    "TileConfig", "phase_parallel_scatter", "scatter_conv_multi", "scatter_conv_single",
    "scatter_index_trace", "tiled_scatter_conv",
    "GroupSpec", "group_conv_gather", "group_conv_scatter_reuse", "orientation_pool_avg",
    "orientation_pool_max", "subgroup_pool_max", "tiled_group_conv", "transform_kernel",
    "base_kernel_grad", "conv_backward_input", "conv_backward_weight", "finite_diff_check",
    "SteerableBasis", "build_orientation_bank", "gaussian_derivative_basis", "loss_mag",
    "loss_orth", "steer",
]
