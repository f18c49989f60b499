"""Encoder + projector models, optimizer and learning-rate schedule."""
from __future__ import annotations

import math

import numpy as np

from tobias.net.builder import Network, build_network
from tobias.net.spec import ArchSpec
from tobias.tensor.init import init_weights
from tobias.tensor.layers import (Activation, BatchNorm2d, GlobalAvgPool, L2Normalize, Layer,
                                  Linear, Sequential)
from tobias.tensor.rng import RngState, as_rng


def _linear(rng: RngState, n_in, n_out, dtype):
    w = init_weights((n_out, n_in), "kaiming_normal", rng, dtype=dtype)
    return Linear(w, np.zeros(n_out, dtype=dtype))


class ContrastiveModel(Layer):
    """``normalize(proj(GAP(encoder(x))))`` with a two-layer MLP projector."""

    def __init__(self, encoder: Network, proj_dim=32, hidden=None, normalize=True,
                 rng: RngState | int = 0):
        super().__init__()
        rng = as_rng(rng)
        dtype = encoder.dtype
        width = encoder.spec.feature_channels
        hidden = hidden or width
        self.encoder = encoder
        self.gap = GlobalAvgPool()
        self.proj = Sequential([_linear(rng.stream("proj.fc1"), width, hidden, dtype),
                                Activation("relu"),
                                _linear(rng.stream("proj.fc2"), hidden, proj_dim, dtype)],
                               ["fc1", "relu", "fc2"])
        self.norm = L2Normalize() if normalize else None

    def children(self):
        return [("encoder", self.encoder), ("proj", self.proj)]

    def forward(self, x, record=True):
        h = self.gap.forward(self.encoder.features(x, record), record)
        z = self.proj.forward(h, record)
        return self.norm.forward(z, record) if self.norm is not None else z

    def backward(self, dz):
        if self.norm is not None:
            dz = self.norm.backward(dz)
        dh = self.proj.backward(dz)
        return self.encoder.backward(self.gap.backward(dh))


def build_contrastive_model(arch: ArchSpec, rng: RngState | int, proj_dim=32, hidden=None,
                            normalize=True, dtype=np.float32) -> ContrastiveModel:
    root = as_rng(rng)
    encoder = build_network(arch.replace(num_classes=None), root.stream("encoder"), dtype=dtype)
    return ContrastiveModel(encoder, proj_dim, hidden, normalize, root.stream("projector"))


class Classifier(Layer):
    """Encoder body, global average pooling and one linear layer."""

    def __init__(self, encoder: Network, num_classes: int, rng: RngState | int = 0):
        super().__init__()
        rng = as_rng(rng)
        self.encoder = encoder
        self.gap = GlobalAvgPool()
        w = rng.normal(0.0, 0.01, size=(num_classes, encoder.spec.feature_channels), dtype=encoder.dtype)
        self.fc = Linear(w, np.zeros(num_classes, dtype=encoder.dtype))

    def children(self):
        return [("encoder", self.encoder), ("fc", self.fc)]

    def forward(self, x, record=True):
        return self.fc.forward(self.gap.forward(self.encoder.features(x, record), record), record)

    def backward(self, dy):
        return self.encoder.backward(self.gap.backward(self.fc.backward(dy)))


def set_bn_mode(model: Layer, mode: str) -> dict:
    """Switch every batch-norm layer to ``mode``; returns the previous modes."""
    before = {}
    for name, m in model.named_modules():
        if isinstance(m, BatchNorm2d):
            before[name] = m.mode
            m.mode = mode
    return before


def restore_bn_modes(model: Layer, modes: dict) -> None:
    for name, m in model.named_modules():
        if name in modes:
            m.mode = modes[name]


def bn_buffers(model: Layer) -> dict:
    out = {}
    for name, m in model.named_modules():
        if isinstance(m, BatchNorm2d):
            out[f"{name}.running_mean"] = m.running_mean
            out[f"{name}.running_var"] = m.running_var
    return out


def load_bn_buffers(model: Layer, buffers: dict) -> None:
    for name, m in model.named_modules():
        if isinstance(m, BatchNorm2d):
            m.running_mean = np.array(buffers[f"{name}.running_mean"], dtype=m.running_mean.dtype)
            m.running_var = np.array(buffers[f"{name}.running_var"], dtype=m.running_var.dtype)


def cosine_lr(base_lr: float, step: int, total: int) -> float:
    """Cosine decay from ``base_lr`` at step 0 towards 0 at ``total``."""
    if total <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * min(step, total) / total))


class SGD:
    """Momentum SGD with coupled L2 weight decay (``g + wd * p``)."""

    def __init__(self, model: Layer, momentum=0.9, weight_decay=0.0):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        grads = dict(self.model.named_grads())
        for name, p in self.model.named_parameters():
            g = grads.get(name)
            if g is None:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * p
            buf = self.buffers.get(name)
            buf = g.astype(p.dtype, copy=True) if buf is None else self.momentum * buf + g
            self.buffers[name] = buf.astype(p.dtype, copy=False)
            p -= (lr * self.buffers[name]).astype(p.dtype, copy=False)
