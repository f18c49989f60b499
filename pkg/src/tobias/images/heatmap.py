"""Heatmap overlays of aggregation maps."""
from __future__ import annotations

import numpy as np

from tobias.images.codecs import as_uint8, save_image, to_float
from tobias.images.transforms import resize_bilinear

# blue -> cyan -> green -> yellow -> red
_RAMP = np.array([
    [0.0, 0.0, 0.5],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [0.5, 1.0, 0.5],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
])


def minmax(a: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant map becomes uniformly 0.5."""
    a = np.asarray(a, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.full_like(a, 0.5)
    return (a - lo) / (hi - lo)


def colorize(v: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the color ramp to ``(..., 3)`` floats."""
    pos = np.clip(v, 0.0, 1.0) * (len(_RAMP) - 1)
    i = np.minimum(np.floor(pos).astype(int), len(_RAMP) - 2)
    f = (pos - i)[..., None]
    return _RAMP[i] * (1 - f) + _RAMP[i + 1] * f


def render_heatmap(a: np.ndarray, img: np.ndarray, out_path=None, alpha=0.5) -> np.ndarray:
    """Blend a colorized, upsampled aggregation map over ``img``; optionally save it."""
    base = to_float(img).astype(np.float64)
    heat = resize_bilinear(minmax(a), base.shape[:2])
    overlay = as_uint8((1 - alpha) * base + alpha * colorize(heat))
    if out_path is not None:
        save_image(out_path, overlay)
    return overlay
