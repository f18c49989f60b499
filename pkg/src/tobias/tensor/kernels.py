"""Forward and backward numeric kernels on NCHW numpy arrays.

Kernels compute in the dtype of their input (float32 for throughput,
float64 for gradient verification).  Convolution is cross-correlation,
lowered to a single matrix product over an im2col view.
"""
from __future__ import annotations

import enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tobias.errors import ConfigError, DimensionError

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805
ELU_ALPHA = 1.0


class ActivationKind(str, enum.Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    ARCTAN = "arctan"
    ELU = "elu"
    SELU = "selu"
    SOFTPLUS = "softplus"

    @classmethod
    def parse(cls, value) -> "ActivationKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown activation {value!r} (choose from {choices})") from None


def _require_order(x, order, name):
    if x.ndim != order:
        raise DimensionError(f"{name}: expected an order-{order} tensor, got shape {x.shape}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or stride < 1:
        raise DimensionError(
            f"convolution window {kernel} (padding {padding}) does not fit extent {size}")
    return span // stride + 1


def pool_output_size(size: int, kernel: int, stride: int, padding: int = 0,
                     ceil_mode: bool = False) -> int:
    span = size + 2 * padding - kernel
    if span < 0:
        raise DimensionError(f"pooling window {kernel} does not fit extent {size}")
    if ceil_mode:
        out = -(-span // stride) + 1
        # the last window must start inside the input or left padding
        if (out - 1) * stride >= size + padding:
            out -= 1
    else:
        out = span // stride + 1
    if out < 1:
        raise DimensionError(f"pooling produces an empty output from extent {size}")
    return out


# ---------------------------------------------------------------- conv2d

def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1: stride, : stride * (wo - 1) + 1: stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def _check_conv(x, w, b):
    _require_order(x, 4, "conv2d input")
    _require_order(w, 4, "conv2d weight")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d: input channel axis (axis 1) has {x.shape[1]} entries but weight "
            f"in-channel axis (axis 1) has {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(
            f"conv2d: bias shape {b.shape} does not match weight out-channel axis {w.shape[0]}")


def conv2d_forward_cached(x, w, b=None, stride=1, padding=0):
    """Convolution returning ``(y, cols)``; ``cols`` feeds :func:`conv2d_backward`."""
    _check_conv(x, w, b)
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if kh == 1 and kw == 1 and padding == 0:
        xs = x[:, :, ::stride, ::stride] if stride > 1 else x
        cols = xs.transpose(0, 2, 3, 1).reshape(n * ho * wo, c)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    y = cols @ w.reshape(co, -1).T
    if b is not None:
        y += b
    y = np.ascontiguousarray(y.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))
    return y, cols


def conv2d_forward(x, w, b=None, stride=1, padding=0):
    return conv2d_forward_cached(x, w, b, stride, padding)[0]


def conv2d_backward(dy, x, w, stride=1, padding=0, cols=None):
    """Gradients ``(dx, dw, db)`` of a convolution given upstream ``dy``."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = dy.shape[2:]
    if cols is None:
        _, cols = conv2d_forward_cached(x, w, None, stride, padding)
    dyf = dy.transpose(0, 2, 3, 1).reshape(-1, co)
    dw = (dyf.T @ cols).reshape(w.shape)
    db = dyf.sum(axis=0)
    dcols = (dyf @ w.reshape(co, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i: i + stride * (ho - 1) + 1: stride,
                j: j + stride * (wo - 1) + 1: stride] += dcols[..., i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, padding: padding + h, padding: padding + wd]
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------- pooling

def _pool_pad(x, kernel, stride, padding, ceil_mode, fill):
    h, w = x.shape[2:]
    ho = pool_output_size(h, kernel, stride, padding, ceil_mode)
    wo = pool_output_size(w, kernel, stride, padding, ceil_mode)
    extra_h = max(0, (ho - 1) * stride + kernel - (h + 2 * padding))
    extra_w = max(0, (wo - 1) * stride + kernel - (w + 2 * padding))
    if padding or extra_h or extra_w:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding + extra_h), (padding, padding + extra_w)),
                   constant_values=fill)
    return x, ho, wo


def maxpool2d_forward_cached(x, kernel, stride=None, padding=0, ceil_mode=False):
    """Windowed maximum; returns ``(y, argmax)`` with argmax flat within each window."""
    _require_order(x, 4, "maxpool2d input")
    if kernel < 1 or (stride is not None and stride < 1):
        raise DimensionError(f"maxpool2d: kernel {kernel} and stride {stride} must be >= 1")
    stride = stride or kernel
    xp, ho, wo = _pool_pad(x, kernel, stride, padding, ceil_mode, -np.inf)
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1: stride, : stride * (wo - 1) + 1: stride]
    win = win.reshape(*win.shape[:4], kernel * kernel)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg


def maxpool2d(x, kernel, stride=None, padding=0, ceil_mode=False):
    return maxpool2d_forward_cached(x, kernel, stride, padding, ceil_mode)[0]


def maxpool2d_backward(dy, x_shape, arg, kernel, stride=None, padding=0):
    stride = stride or kernel
    n, c, h, w = x_shape
    ho, wo = dy.shape[2:]
    hp = max(h + 2 * padding, (ho - 1) * stride + kernel)
    wp = max(w + 2 * padding, (wo - 1) * stride + kernel)
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    for i in range(kernel):
        for j in range(kernel):
            hit = arg == i * kernel + j
            dxp[:, :, i: i + stride * (ho - 1) + 1: stride,
                j: j + stride * (wo - 1) + 1: stride] += np.where(hit, dy, 0)
    return np.ascontiguousarray(dxp[:, :, padding: padding + h, padding: padding + w])


def global_avg_pool(x):
    _require_order(x, 4, "global_avg_pool input")
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(dy, x_shape):
    h, w = x_shape[2:]
    return np.broadcast_to(dy / (h * w), x_shape).copy()


# ---------------------------------------------------------------- batch norm

def batchnorm_forward_cached(x, gamma, beta, eps=1e-5, mean=None, var=None):
    """Per-channel normalization.

    Without ``mean``/``var`` the batch statistics over (N, H, W) are used,
    which is how an untrained network normalizes.  Returns ``(y, cache)``.
    """
    _require_order(x, 4, "batchnorm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batchnorm: gamma {gamma.shape} / beta {beta.shape} do not match channel axis {c}")
    if mean is None:
        mean = x.mean(axis=(0, 2, 3))
        var = ((x - mean[None, :, None, None]) ** 2).mean(axis=(0, 2, 3))
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return y.astype(x.dtype, copy=False), (xhat, inv_std, mean, var)


def batchnorm_inference(x, gamma, beta, eps=1e-5):
    """Batch-statistics normalization (the untrained-network behaviour)."""
    return batchnorm_forward_cached(x, gamma, beta, eps)[0]


def batchnorm_backward(dy, gamma, cache):
    """Gradients ``(dx, dgamma, dbeta)`` for batch-statistics normalization."""
    xhat, inv_std = cache[0], cache[1]
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dbeta = dy.sum(axis=(0, 2, 3))
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    dx = (inv_std[None, :, None, None] / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    )
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


# ---------------------------------------------------------------- activations

def activate(x, kind):
    kind = ActivationKind.parse(kind)
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0)
    if kind is ActivationKind.SIGMOID:
        return _sigmoid(x)
    if kind is ActivationKind.ARCTAN:
        return np.arctan(x)
    if kind is ActivationKind.ELU:
        return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0)))
    if kind is ActivationKind.SELU:
        return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0)))
    return np.logaddexp(0, x).astype(x.dtype, copy=False)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)


def activate_backward(dy, x, kind):
    """Upstream gradient times the activation's derivative at ``x``."""
    kind = ActivationKind.parse(kind)
    if kind is ActivationKind.RELU:
        return np.where(x > 0, dy, 0).astype(dy.dtype, copy=False)
    if kind is ActivationKind.SIGMOID:
        s = _sigmoid(x)
        return dy * s * (1 - s)
    if kind is ActivationKind.ARCTAN:
        return dy / (1 + x * x)
    if kind is ActivationKind.ELU:
        return dy * np.where(x > 0, 1, ELU_ALPHA * np.exp(np.minimum(x, 0)))
    if kind is ActivationKind.SELU:
        return dy * SELU_SCALE * np.where(x > 0, 1, SELU_ALPHA * np.exp(np.minimum(x, 0)))
    return dy * _sigmoid(x)


# ---------------------------------------------------------------- dense

def linear_forward(x, w, b=None):
    _require_order(x, 2, "linear input")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"linear: input feature axis (axis 1) has {x.shape[1]} entries, "
            f"weight in-feature axis (axis 1) has {w.shape[1]}")
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


def linear_backward(dy, x, w):
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def l2_normalize(x, eps=1e-12):
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    return x / np.maximum(norm, eps)


def l2_normalize_backward(dy, x, eps=1e-12):
    norm = np.maximum(np.sqrt((x * x).sum(axis=1, keepdims=True)), eps)
    y = x / norm
    return (dy - y * (dy * y).sum(axis=1, keepdims=True)) / norm
