"""Tensor storage, numeric kernels, initializers and seeded randomness."""
from tobias.tensor.init import InitScheme, init_weights
from tobias.tensor.kernels import (
    ActivationKind,
    activate,
    batchnorm_inference,
    conv2d_forward,
    global_avg_pool,
    maxpool2d,
)
from tobias.tensor.rng import RngState, as_rng

__all__ = [
    "ActivationKind",
    "InitScheme",
    "RngState",
    "activate",
    "as_rng",
    "batchnorm_inference",
    "conv2d_forward",
    "global_avg_pool",
    "init_weights",
    "maxpool2d",
]
