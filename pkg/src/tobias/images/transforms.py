"""Resizing and per-channel normalization of HWC float images."""
from __future__ import annotations

import numpy as np

from tobias.errors import ConfigError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centers: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, size) -> np.ndarray:
    """Bilinear resize of an ``(H, W)`` or ``(H, W, C)`` image to ``size = (H', W')``."""
    out_h, out_w = int(size[0]), int(size[1])
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"resize target must be positive, got {size}")
    img = np.asarray(img)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    dtype = img.dtype if np.issubdtype(img.dtype, np.floating) else np.float32
    x = img.astype(np.float64)
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    shape = (-1, 1) + (1,) * (x.ndim - 2)
    fy = fy.reshape(shape)
    rows = x[y0] * (1 - fy) + x[y1] * fy
    fx = fx.reshape((1, -1) + (1,) * (x.ndim - 2))
    out = rows[:, x0] * (1 - fx) + rows[:, x1] * fx
    return out.astype(dtype)


def normalize(img: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    std = np.asarray(std, dtype=np.float32)
    if np.any(std <= 0):
        raise ConfigError(f"normalization std must be positive, got {std.tolist()}")
    return (np.asarray(img, dtype=np.float32) - np.asarray(mean, dtype=np.float32)) / std


def denormalize(x: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    return np.asarray(x, dtype=np.float32) * np.asarray(std, dtype=np.float32) + np.asarray(mean, dtype=np.float32)


def to_batch(images, size=None, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """HWC float images -> normalized NCHW float32 batch, optionally resized."""
    out = []
    for img in images:
        if size is not None:
            img = resize_bilinear(img, (size, size))
        out.append(normalize(img, mean, std).transpose(2, 0, 1))
    return np.ascontiguousarray(np.stack(out))
