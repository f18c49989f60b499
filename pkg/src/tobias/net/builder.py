"""Build randomly initialized CNNs from an :class:`ArchSpec` and run them."""
from __future__ import annotations

import hashlib

import numpy as np

from tobias.errors import ConfigError, DimensionError
from tobias.net.spec import ArchSpec, StageSpec
from tobias.tensor.init import init_weights
from tobias.tensor.layers import (
    Activation,
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    Residual,
    Sequential,
)
from tobias.tensor.rng import RngState, as_rng


class _Builder:
    """Draws each layer's weights from a stream named after the layer path.

    Named streams make draws independent of construction order, so a
    truncated network and its full counterpart share every prefix weight,
    and toggling skips or BN never perturbs other layers' weights.
    """

    def __init__(self, spec: ArchSpec, rng: RngState, dtype):
        self.spec = spec
        self.rng = rng
        self.dtype = dtype

    def conv(self, path, cin, cout, kernel, stride=1, padding=None):
        w = init_weights((cout, cin, kernel, kernel), self.spec.init, self.rng.stream(path), self.dtype)
        bias = None if self.spec.use_bn else np.zeros(cout, dtype=self.dtype)
        pad = kernel // 2 if padding is None else padding
        return Conv2d(w, bias, stride=stride, padding=pad)

    def norm(self, channels):
        return BatchNorm2d(channels, mode=self.spec.bn_mode, dtype=self.dtype)

    def conv_unit(self, seq: Sequential, path, cin, cout, kernel, stride=1, padding=None, act=True):
        seq.append(self.conv(path, cin, cout, kernel, stride, padding), "conv")
        if self.spec.use_bn:
            seq.append(self.norm(cout), "bn")
        if act:
            seq.append(Activation(self.spec.activation), "act")

    def stem(self):
        st = self.spec.stem
        seq = Sequential()
        self.conv_unit(seq, "stem.conv", 3, st.out_channels, st.kernel, st.stride, st.conv_padding)
        if st.pool:
            seq.append(MaxPool2d(st.pool_kernel, st.pool_stride, st.pool_padding), "pool")
        return seq

    def plain_stage(self, path, cin, stage: StageSpec):
        seq = Sequential()
        for b in range(stage.block_count):
            block = Sequential()
            self.conv_unit(block, f"{path}.{b}.conv", cin, stage.out_channels, stage.kernel)
            seq.append(block, str(b))
            cin = stage.out_channels
        if stage.downsample:
            seq.append(MaxPool2d(stage.pool_kernel, stage.pool_stride), "pool")
        return seq

    def bottleneck_stage(self, path, cin, stage: StageSpec):
        seq = Sequential()
        width = stage.out_channels // 4
        for b in range(stage.block_count):
            stride = 2 if (b == 0 and stage.downsample) else 1
            p = f"{path}.{b}"
            main = Sequential()
            unit = Sequential()
            self.conv_unit(unit, f"{p}.conv1", cin, width, 1, 1, 0)
            main.append(unit, "u1")
            unit = Sequential()
            self.conv_unit(unit, f"{p}.conv2", width, width, stage.kernel, stride)
            main.append(unit, "u2")
            unit = Sequential()
            self.conv_unit(unit, f"{p}.conv3", width, stage.out_channels, 1, 1, 0, act=False)
            main.append(unit, "u3")
            shortcut = None
            if stride != 1 or cin != stage.out_channels:
                shortcut = Sequential()
                self.conv_unit(shortcut, f"{p}.proj", cin, stage.out_channels, 1, stride, 0, act=False)
            seq.append(Residual(main, shortcut, self.spec.activation, self.spec.use_skip), str(b))
            cin = stage.out_channels
        return seq

    def body(self):
        body = Sequential()
        cin = 3
        if self.spec.stem is not None:
            body.append(self.stem(), "stem")
            cin = self.spec.stem.out_channels
        for i, stage in enumerate(self.spec.retained_stages, start=1):
            make = self.plain_stage if stage.block_kind == "plain" else self.bottleneck_stage
            body.append(make(f"stage{i}", cin, stage), f"stage{i}")
            cin = stage.out_channels
        return body

    def head(self, zero=False):
        cin = self.spec.feature_channels
        n = self.spec.num_classes
        if zero:
            w = np.zeros((n, cin), dtype=self.dtype)
        else:
            w = self.rng.stream("head.fc").normal(0.0, 0.01, size=(n, cin), dtype=self.dtype)
        return Sequential([GlobalAvgPool(), Linear(w, np.zeros(n, dtype=self.dtype))], ["gap", "fc"])


class Network(Layer):
    """An immutable-after-build CNN: a feature body and an optional GAP+linear head."""

    def __init__(self, spec: ArchSpec, seed: int, body: Sequential, head: Sequential | None):
        super().__init__()
        self.spec = spec
        self.seed = seed
        self.body = body
        self.head = head

    def __repr__(self):
        return f"Network({self.spec.name!r}, seed={self.seed}, convs={self.conv_count()})"

    def children(self):
        out = [("body", self.body)]
        if self.head is not None:
            out.append(("head", self.head))
        return out

    @property
    def dtype(self):
        for _, p in self.named_parameters():
            return p.dtype
        return np.dtype(np.float32)

    def conv_count(self) -> int:
        return sum(isinstance(m, Conv2d) for m in self.body.modules())

    def feature_shape(self, input_shape):
        """Predicted NCHW feature shape by composing each layer's shape function."""
        return self.body.output_shape(tuple(input_shape))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def _check_input(self, batch):
        if batch.ndim != 4 or batch.shape[1] != 3:
            raise DimensionError(f"expected an (N, 3, H, W) batch, got shape {batch.shape}")
        h, w = batch.shape[2:]
        if min(h, w) < self.spec.input_size:
            raise DimensionError(
                f"input {h}x{w} is smaller than {self.spec.name}'s minimum "
                f"{self.spec.input_size}x{self.spec.input_size}")

    def features(self, batch, record=False):
        """NCHW activations of the last retained stage (after its activation)."""
        self._check_input(batch)
        return self.body.forward(batch.astype(self.dtype, copy=False), record)

    def forward(self, x, record=True):
        feats = self.features(x, record)
        if self.head is None:
            return feats
        return self.head.forward(feats, record)

    def backward(self, dy):
        if self.head is not None:
            dy = self.head.backward(dy)
        return self.body.backward(dy)


def build_network(spec: ArchSpec, rng: RngState | int, dtype=np.float32, zero_head=False) -> Network:
    rng = as_rng(rng)
    b = _Builder(spec, rng, dtype)
    body = b.body()
    head = b.head(zero=zero_head) if spec.num_classes else None
    return Network(spec, rng.seed, body, head)


def extract_features(net: Network, batch) -> np.ndarray:
    """Feature volumes ``Q`` as an ``(N, h, w, d)`` array, one volume per image."""
    return net.features(batch, record=False).transpose(0, 2, 3, 1)


def forward_logits(net: Network, batch) -> np.ndarray:
    if net.head is None:
        raise ConfigError(f"{net.spec.name} was built without a classifier head (set num_classes)")
    return net.head.forward(net.features(batch, record=False), record=False)
