"""Contrastive pretraining loop, its configuration and checkpoints."""
from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tobias.augment.pipeline import TRANSFORMS, AugmentationPipeline
from tobias.augment.view import MERGE_MODES, ViewPool, sample_view
from tobias.errors import ConfigError, ParseError, TobiasIOError
from tobias.images.codecs import to_float
from tobias.images.transforms import resize_bilinear, to_batch
from tobias.net.spec import ArchSpec, resolve, spec_from_dict, spec_to_dict
from tobias.ssl.losses import contrastive_loss_and_grad
from tobias.ssl.model import (SGD, ContrastiveModel, bn_buffers, build_contrastive_model, cosine_lr,
                              load_bn_buffers)
from tobias.tensor.rng import RngState

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CHECKPOINT_VERSION = 1
MODES = ("self", "tobias")
DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class SslConfig:
    """Pretraining settings; defaults are the desk-scale ones."""

    arch: str = "tinynet"
    seed: int = 0
    mode: str = "tobias"  # "self": second view is a plain augmentation
    merge: str = "tobias"  # how merged views are built: tobias | random | mixup
    tau: float = 0.2
    p: float = 0.3
    exclude_self: bool = False
    batch_size: int = 32
    steps: int = 200
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    proj_dim: int = 32
    proj_hidden: int | None = None
    normalize: bool = True
    reduction: str = "mean"
    image_size: int = 64
    # grayscale is off at desk scale: on the small synthetic corpus it erases the
    # color cue that separates instances and the loss barely moves in 200 steps
    transforms: tuple[str, ...] = ("crop", "flip", "jitter")
    crop_scale: tuple[float, float] = (0.2, 1.0)
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        object.__setattr__(self, "crop_scale", tuple(self.crop_scale))
        if not 0 < self.crop_scale[0] <= self.crop_scale[1] <= 1:
            raise ConfigError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p must lie in [0, 1], got {self.p}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.merge not in MERGE_MODES:
            raise ConfigError(f"merge must be one of {MERGE_MODES}, got {self.merge!r}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be positive and steps non-negative")
        if self.lr < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("lr and weight_decay must be non-negative, momentum in [0, 1)")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError(f"reduction must be 'sum' or 'mean', got {self.reduction!r}")
        unknown = [t for t in self.transforms if t not in TRANSFORMS]
        if unknown:
            raise ConfigError(f"unknown transforms {unknown}; choose from {sorted(TRANSFORMS)}")

    @property
    def uses_masks(self) -> bool:
        return self.mode == "tobias" and self.p > 0 and self.merge == "tobias"

    def replace(self, **changes) -> "SslConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["transforms"] = list(self.transforms)
        d["crop_scale"] = list(self.crop_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SslConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown pretraining settings {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SslConfig":
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text())
        except OSError as exc:
            raise TobiasIOError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
        return cls.from_dict(data.get("pretrain", data))


@dataclass
class TrainState:
    config: SslConfig
    arch: ArchSpec
    model: ContrastiveModel
    optimizer: SGD
    view1: AugmentationPipeline
    view2: AugmentationPipeline
    merge_rng: RngState
    shuffle_rng: RngState
    step: int = 0
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cursor: int = 0
    history: list = field(default_factory=list)  # (step, loss, lr)

    @property
    def encoder(self):
        return self.model.encoder

    def next_batch(self, n_images: int) -> np.ndarray:
        n = self.config.batch_size
        if n > n_images:
            raise ConfigError(f"batch size {n} exceeds the {n_images} training images")
        if self.cursor + n > len(self.order):
            self.order = self.shuffle_rng.permutation(n_images)
            self.cursor = 0
        idx = self.order[self.cursor:self.cursor + n]
        self.cursor += n
        return idx

    # ------------------------------------------------------------ checkpoints
    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "format": "tobias-checkpoint", "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(), "arch": spec_to_dict(self.arch),
            "step": self.step, "cursor": self.cursor, "order": [int(i) for i in self.order],
            "history": [list(h) for h in self.history],
            "rng": {"view1": self.view1.get_state(), "view2": self.view2.get_state(),
                    "merge": self.merge_rng.get_state(), "shuffle": self.shuffle_rng.get_state()},
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
        for name, p in self.model.named_parameters():
            arrays[f"param/{name}"] = p
        for name, b in bn_buffers(self.model).items():
            arrays[f"buffer/{name}"] = b
        for name, m in self.optimizer.buffers.items():
            arrays[f"momentum/{name}"] = m
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path) -> "TrainState":
        path = Path(path)
        try:
            with np.load(path, allow_pickle=False) as data:
                arrays = {k: data[k] for k in data.files}
        except OSError as exc:
            raise TobiasIOError(f"cannot read checkpoint {path}: {exc}") from exc
        except ValueError as exc:
            raise ParseError(f"{path} is not a checkpoint: {exc}") from None
        if "meta" not in arrays:
            raise ParseError(f"{path} has no checkpoint metadata")
        meta = json.loads(arrays["meta"].tobytes().decode())
        if meta.get("format") != "tobias-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint format {meta.get('format')} v{meta.get('version')}")
        config = SslConfig.from_dict(meta["config"])
        state = new_state(config, spec_from_dict(meta["arch"]))
        params = dict(state.model.named_parameters())
        for name, p in params.items():
            p[...] = arrays[f"param/{name}"]
        load_bn_buffers(state.model, {k[len("buffer/"):]: v for k, v in arrays.items()
                                      if k.startswith("buffer/")})
        state.optimizer.buffers = {k[len("momentum/"):]: v.copy() for k, v in arrays.items()
                                   if k.startswith("momentum/")}
        state.view1.set_state(meta["rng"]["view1"])
        state.view2.set_state(meta["rng"]["view2"])
        state.merge_rng.set_state(meta["rng"]["merge"])
        state.shuffle_rng.set_state(meta["rng"]["shuffle"])
        state.step = meta["step"]
        state.cursor = meta["cursor"]
        state.order = np.array(meta["order"], dtype=np.int64)
        state.history = [tuple(h) for h in meta["history"]]
        return state


def new_state(config: SslConfig, arch: ArchSpec | None = None) -> TrainState:
    """Fresh model, optimizer and rng streams, all derived from ``config.seed``."""
    arch = arch if arch is not None else resolve(config.arch)
    if arch.input_size > config.image_size:
        raise ConfigError(f"{arch.name} needs {arch.input_size}px inputs but image_size is {config.image_size}")
    root = RngState(config.seed)
    model = build_contrastive_model(arch, root.stream("model"), config.proj_dim,
                                    config.proj_hidden, config.normalize, DTYPES[config.dtype])
    opt = SGD(model, config.momentum, config.weight_decay)
    view1 = AugmentationPipeline.from_names(config.transforms, config.image_size, root.stream("view1"),
                                           config.crop_scale)
    view2 = AugmentationPipeline.from_names(config.transforms, config.image_size, root.stream("view2"),
                                           config.crop_scale)
    return TrainState(config, arch, model, opt, view1, view2,
                      root.stream("merge"), root.stream("shuffle"))


def prepare_images(images, size: int) -> list:
    """Float HWC images at ``size x size``."""
    out = []
    for img in images:
        img = to_float(img)
        if img.shape[:2] != (size, size):
            img = resize_bilinear(img, (size, size))
        out.append(img)
    return out


def train_step(state: TrainState, pool: ViewPool) -> float:
    cfg = state.config
    idx = state.next_batch(len(pool))
    first = [state.view1(pool.images[k]) for k in idx]
    if cfg.mode == "self":
        second = [state.view2(pool.images[k]) for k in idx]
    else:
        second = [sample_view(int(k), pool, cfg.p, state.merge_rng, state.view2,
                              cfg.exclude_self, cfg.merge)[0] for k in idx]
    x = to_batch(first + second).astype(DTYPES[cfg.dtype], copy=False)
    model = state.model
    model.zero_grad()
    z = model.forward(x, record=True)
    n = len(idx)
    loss, dz1, dz2 = contrastive_loss_and_grad(z[:n], z[n:], cfg.tau, cfg.reduction)
    model.backward(np.concatenate([dz1, dz2]).astype(z.dtype, copy=False))
    lr = cosine_lr(cfg.lr, state.step, cfg.steps)
    state.optimizer.step(lr)
    state.history.append((state.step, loss, lr))
    state.step += 1
    return loss


def pretrain(config: SslConfig, images, masks=None, state: TrainState | None = None,
             steps: int | None = None, on_step=None) -> TrainState:
    """Run contrastive pretraining until ``config.steps`` (or ``steps`` more steps).

    ``masks`` (a MaskCache aligned with ``images``) is needed whenever merged
    views use network masks.  Passing ``state`` resumes a previous run.
    """
    if config.uses_masks:
        if masks is None:
            raise ConfigError("merged views need a mask cache; precompute one with "
                              "`tobias masks --manifest MANIFEST --out masks.bin` and pass --masks")
        if len(masks) != len(images):
            raise ConfigError(f"mask cache holds {len(masks)} masks for {len(images)} images")
    state = state if state is not None else new_state(config)
    pool = ViewPool(prepare_images(images, config.image_size), masks)
    end = config.steps if steps is None else min(config.steps, state.step + steps)
    while state.step < end:
        loss = train_step(state, pool)
        if on_step is not None:
            on_step(state.step - 1, loss, state.history[-1][2])
    return state


def loss_log(history) -> str:
    return "".join(json.dumps({"step": s, "loss": l, "lr": lr}) + "\n" for s, l, lr in history)
