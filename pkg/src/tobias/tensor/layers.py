"""Stateful layer wrappers around the kernels.

A layer's ``forward(x, record=True)`` keeps what its ``backward`` needs;
``backward`` then fills ``layer.grads`` and returns the input gradient.
Calling ``forward(x, record=False)`` leaves the layer untouched, which is
what makes feature extraction safe to share across threads.
"""
from __future__ import annotations

import numpy as np

from tobias.errors import StateError
from tobias.tensor import kernels as K
from tobias.tensor.kernels import ActivationKind


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, record=True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def output_shape(self, shape):
        return tuple(shape)

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache

    def children(self):
        return []

    def named_parameters(self, prefix=""):
        for name, p in self.params.items():
            yield prefix + name, p
        for child_name, child in self.children():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_grads(self, prefix=""):
        for name, g in self.grads.items():
            yield prefix + name, g
        for child_name, child in self.children():
            yield from child.named_grads(f"{prefix}{child_name}.")

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for child_name, child in self.children():
            yield from child.named_modules(f"{prefix}{child_name}.")

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def astype(self, dtype):
        for m in self.modules():
            for k, v in m.params.items():
                m.params[k] = v.astype(dtype)
            m._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        pass

    def zero_grad(self):
        for m in self.modules():
            m.grads = {}


class Conv2d(Layer):
    def __init__(self, weight, bias=None, stride=1, padding=0):
        super().__init__()
        self.params["weight"] = weight
        if bias is not None:
            self.params["bias"] = bias
        self.stride = stride
        self.padding = padding

    @property
    def kernel(self):
        return self.params["weight"].shape[2]

    def __repr__(self):
        co, ci, k, _ = self.params["weight"].shape
        return f"Conv2d({ci}->{co}, k={k}, s={self.stride}, p={self.padding})"

    def output_shape(self, shape):
        n, c, h, w = shape
        kh, kw = self.params["weight"].shape[2:]
        return (n, self.params["weight"].shape[0],
                K.conv_output_size(h, kh, self.stride, self.padding),
                K.conv_output_size(w, kw, self.stride, self.padding))

    def forward(self, x, record=True):
        y, cols = K.conv2d_forward_cached(x, self.params["weight"], self.params.get("bias"),
                                          self.stride, self.padding)
        if record:
            self._cache = (x, cols)
        return y

    def backward(self, dy):
        x, cols = self._take_cache()
        dx, dw, db = K.conv2d_backward(dy, x, self.params["weight"], self.stride, self.padding, cols)
        self.grads["weight"] = dw
        if "bias" in self.params:
            self.grads["bias"] = db
        return dx


class BatchNorm2d(Layer):
    """Batch normalization with three statistics modes.

    ``batch``: per-batch statistics (untrained-network semantics, default).
    ``running``: stored running statistics (after training).
    ``identity``: the layer passes its input through unchanged.
    """

    def __init__(self, channels, eps=1e-5, mode="batch", momentum=0.1, dtype=np.float32):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.mode = mode
        self.momentum = momentum

    def __repr__(self):
        return f"BatchNorm2d({self.params['gamma'].shape[0]}, mode={self.mode})"

    def _cast_buffers(self, dtype):
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)

    def forward(self, x, record=True):
        if self.mode == "identity":
            if record:
                self._cache = ("identity",)
            return x
        gamma, beta = self.params["gamma"], self.params["beta"]
        if self.mode == "running":
            y, cache = K.batchnorm_forward_cached(x, gamma, beta, self.eps,
                                                  self.running_mean, self.running_var)
        else:
            y, cache = K.batchnorm_forward_cached(x, gamma, beta, self.eps)
        if record:
            self._cache = cache
            if self.mode == "batch":
                m = x.shape[0] * x.shape[2] * x.shape[3]
                unbiased = cache[3] * (m / max(m - 1, 1))
                mom = self.momentum
                self.running_mean = ((1 - mom) * self.running_mean + mom * cache[2]).astype(x.dtype)
                self.running_var = ((1 - mom) * self.running_var + mom * unbiased).astype(x.dtype)
        return y

    def backward(self, dy):
        cache = self._take_cache()
        if len(cache) == 1:
            return dy
        if self.mode == "running":
            xhat, inv_std = cache[0], cache[1]
            self.grads["gamma"] = (dy * xhat).sum(axis=(0, 2, 3))
            self.grads["beta"] = dy.sum(axis=(0, 2, 3))
            return dy * (self.params["gamma"] * inv_std)[None, :, None, None]
        dx, dg, db = K.batchnorm_backward(dy, self.params["gamma"], cache)
        self.grads["gamma"] = dg
        self.grads["beta"] = db
        return dx


class Activation(Layer):
    def __init__(self, kind):
        super().__init__()
        self.kind = ActivationKind.parse(kind)

    def __repr__(self):
        return f"Activation({self.kind.value})"

    def forward(self, x, record=True):
        if record:
            self._cache = x
        return K.activate(x, self.kind)

    def backward(self, dy):
        return K.activate_backward(dy, self._take_cache(), self.kind)


class MaxPool2d(Layer):
    def __init__(self, kernel, stride=None, padding=0, ceil_mode=False):
        super().__init__()
        self.kernel = kernel
        self.stride = stride or kernel
        self.padding = padding
        self.ceil_mode = ceil_mode

    def __repr__(self):
        return f"MaxPool2d(k={self.kernel}, s={self.stride}, p={self.padding}, ceil={self.ceil_mode})"

    def output_shape(self, shape):
        n, c, h, w = shape
        return (n, c,
                K.pool_output_size(h, self.kernel, self.stride, self.padding, self.ceil_mode),
                K.pool_output_size(w, self.kernel, self.stride, self.padding, self.ceil_mode))

    def forward(self, x, record=True):
        y, arg = K.maxpool2d_forward_cached(x, self.kernel, self.stride, self.padding, self.ceil_mode)
        if record:
            self._cache = (x.shape, arg)
        return y

    def backward(self, dy):
        shape, arg = self._take_cache()
        return K.maxpool2d_backward(dy, shape, arg, self.kernel, self.stride, self.padding)


class GlobalAvgPool(Layer):
    """Spatial mean, flattened to ``(N, C)``."""

    def output_shape(self, shape):
        return (shape[0], shape[1])

    def forward(self, x, record=True):
        if record:
            self._cache = x.shape
        return K.global_avg_pool(x)[:, :, 0, 0]

    def backward(self, dy):
        shape = self._take_cache()
        return K.global_avg_pool_backward(dy[:, :, None, None], shape)


class Linear(Layer):
    def __init__(self, weight, bias=None):
        super().__init__()
        self.params["weight"] = weight
        if bias is not None:
            self.params["bias"] = bias

    def __repr__(self):
        o, i = self.params["weight"].shape
        return f"Linear({i}->{o})"

    def output_shape(self, shape):
        return (shape[0], self.params["weight"].shape[0])

    def forward(self, x, record=True):
        if record:
            self._cache = x
        return K.linear_forward(x, self.params["weight"], self.params.get("bias"))

    def backward(self, dy):
        x = self._take_cache()
        dx, dw, db = K.linear_backward(dy, x, self.params["weight"])
        self.grads["weight"] = dw
        if "bias" in self.params:
            self.grads["bias"] = db
        return dx


class L2Normalize(Layer):
    def forward(self, x, record=True):
        if record:
            self._cache = x
        return K.l2_normalize(x)

    def backward(self, dy):
        return K.l2_normalize_backward(dy, self._take_cache())


class Sequential(Layer):
    def __init__(self, layers=(), names=None):
        super().__init__()
        self.layers = list(layers)
        self.names = list(names) if names is not None else [str(i) for i in range(len(self.layers))]

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __repr__(self):
        inner = ", ".join(repr(l) for l in self.layers)
        return f"Sequential({inner})"

    def append(self, layer, name=None):
        self.layers.append(layer)
        self.names.append(name if name is not None else str(len(self.names)))

    def children(self):
        return list(zip(self.names, self.layers))

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, record=True):
        for layer in self.layers:
            x = layer.forward(x, record)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Residual(Layer):
    """``act(main(x) + shortcut(x))``; ``use_skip=False`` drops the addition.

    The shortcut branch is kept (and its weights drawn) even when the skip
    is disabled so that both variants share parameter draw order.
    """

    def __init__(self, main: Sequential, shortcut: Sequential | None, activation, use_skip=True):
        super().__init__()
        self.main = main
        self.shortcut = shortcut
        self.act = Activation(activation)
        self.use_skip = use_skip

    def __repr__(self):
        return f"Residual(skip={self.use_skip}, main={self.main!r}, shortcut={self.shortcut!r})"

    def children(self):
        out = [("main", self.main)]
        if self.shortcut is not None:
            out.append(("shortcut", self.shortcut))
        out.append(("act", self.act))
        return out

    def output_shape(self, shape):
        return self.main.output_shape(shape)

    def forward(self, x, record=True):
        y = self.main.forward(x, record)
        if self.use_skip:
            s = self.shortcut.forward(x, record) if self.shortcut is not None else x
            y = y + s
        return self.act.forward(y, record)

    def backward(self, dy):
        dy = self.act.backward(dy)
        dx = self.main.backward(dy)
        if self.use_skip:
            dx = dx + (self.shortcut.backward(dy) if self.shortcut is not None else dy)
        return dx
