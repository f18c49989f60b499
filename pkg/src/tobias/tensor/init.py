"""Weight initialization schemes used by the network builder."""
from __future__ import annotations

import enum
import math

import numpy as np

from tobias.errors import ConfigError
from tobias.tensor.rng import RngState


class InitScheme(str, enum.Enum):
    KAIMING_NORMAL = "kaiming_normal"
    XAVIER = "xavier"
    NORMAL = "normal"
    UNIFORM = "uniform"

    @classmethod
    def parse(cls, value) -> "InitScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ConfigError(f"unknown init scheme {value!r} (choose from {choices})") from None


def fans(shape) -> tuple[int, int]:
    """(fan_in, fan_out) for a linear ``(out, in)`` or conv ``(out, in, kh, kw)`` weight."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ConfigError(f"cannot compute fans for shape {shape}")
    receptive = math.prod(shape[2:]) if len(shape) > 2 else 1
    return shape[1] * receptive, shape[0] * receptive


def init_weights(shape, scheme: InitScheme | str, rng: RngState,
                 dtype=np.float32) -> np.ndarray:
    """Draw a weight tensor of ``shape``.

    KaimingNormal uses fan-in with ReLU gain (std = sqrt(2 / fan_in)).
    Xavier is the Glorot uniform variant; Normal and Uniform use the fixed
    0.1 scale of the initialization ablation.
    """
    scheme = InitScheme.parse(scheme)
    fan_in, fan_out = fans(shape)
    if scheme is InitScheme.KAIMING_NORMAL:
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
    elif scheme is InitScheme.XAVIER:
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=shape)
    elif scheme is InitScheme.NORMAL:
        w = rng.normal(0.0, 0.1, size=shape)
    else:
        w = rng.uniform(-0.1, 0.1, size=shape)
    return np.asarray(w).astype(dtype)
