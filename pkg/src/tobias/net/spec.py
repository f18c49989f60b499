"""Declarative architecture descriptions and their TOML file format.

Example (the shipped ``tinynet-deep`` preset)::

    name = "tinynet-deep"
    activation = "relu"
    use_skip = true
    use_bn = true
    init = "kaiming_normal"
    input_size = 64

    [stem]
    out_channels = 16
    kernel = 3
    stride = 1

    [[stages]]
    block = "bottleneck"
    blocks = 3
    out_channels = 64
    downsample = true

    # ... two more stages of 4 and 3 blocks (128 and 256 channels)
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from tobias.errors import ConfigError
from tobias.tensor.init import InitScheme
from tobias.tensor.kernels import ActivationKind

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BLOCK_KINDS = ("plain", "bottleneck")
BN_MODES = ("batch", "running", "identity")


@dataclass(frozen=True)
class StemSpec:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int | None = None
    pool: bool = False
    pool_kernel: int = 3
    pool_stride: int = 2
    pool_padding: int = 1

    @property
    def conv_padding(self) -> int:
        return self.kernel // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class StageSpec:
    """One stage of identical blocks.

    Plain stages are VGG-style conv-BN-act blocks with an optional trailing
    max-pool.  Bottleneck stages are ResNet blocks whose inner width is
    ``out_channels // 4``; downsampling strides the first block's 3x3 conv.
    """

    block_kind: str
    block_count: int
    out_channels: int
    downsample: bool = False
    kernel: int = 3
    pool_kernel: int = 2
    pool_stride: int = 2


@dataclass(frozen=True)
class ArchSpec:
    name: str
    stem: StemSpec | None
    stages: tuple[StageSpec, ...]
    activation: ActivationKind = ActivationKind.RELU
    use_skip: bool = True
    use_bn: bool = True
    init: InitScheme = InitScheme.KAIMING_NORMAL
    truncate_after_stage: int | None = None
    input_size: int = 224
    num_classes: int | None = None
    bn_mode: str = "batch"

    def __post_init__(self):
        object.__setattr__(self, "activation", ActivationKind.parse(self.activation))
        object.__setattr__(self, "init", InitScheme.parse(self.init))
        object.__setattr__(self, "stages", tuple(self.stages))
        validate(self)

    @property
    def retained_stages(self) -> tuple[StageSpec, ...]:
        if self.truncate_after_stage is None:
            return self.stages
        return self.stages[: self.truncate_after_stage]

    @property
    def feature_channels(self) -> int:
        if self.retained_stages:
            return self.retained_stages[-1].out_channels
        if self.stem is None:
            return 3
        return self.stem.out_channels

    def replace(self, **changes) -> "ArchSpec":
        return replace(self, **changes)


def validate(spec: ArchSpec) -> None:
    if not spec.stages and spec.stem is None:
        raise ConfigError(f"{spec.name}: architecture has neither a stem nor stages")
    if spec.stem is not None and spec.stem.out_channels < 1:
        raise ConfigError(f"{spec.name}: stem out_channels must be positive")
    for i, st in enumerate(spec.stages, start=1):
        if st.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"{spec.name}: stage {i} block kind {st.block_kind!r} not in {BLOCK_KINDS}")
        if st.block_count < 1 or st.out_channels < 1:
            raise ConfigError(f"{spec.name}: stage {i} needs positive block count and channels")
        if st.block_kind == "bottleneck" and st.out_channels % 4:
            raise ConfigError(f"{spec.name}: bottleneck stage {i} out_channels must be divisible by 4")
    t = spec.truncate_after_stage
    if t is not None and not 0 <= t <= len(spec.stages):
        raise ConfigError(f"{spec.name}: truncate_after_stage={t} is not a stage index "
                          f"(0..{len(spec.stages)})")
    if t == 0 and spec.stem is None:
        raise ConfigError(f"{spec.name}: cannot truncate to the stem of a stem-less network")
    if spec.bn_mode not in BN_MODES:
        raise ConfigError(f"{spec.name}: bn_mode {spec.bn_mode!r} not in {BN_MODES}")
    if spec.num_classes is not None and spec.num_classes < 1:
        raise ConfigError(f"{spec.name}: num_classes must be positive")


# ---------------------------------------------------------------- file format

_STEM_KEYS = {f.name for f in dataclasses.fields(StemSpec)}
_STAGE_ALIASES = {"block": "block_kind", "blocks": "block_count"}


def spec_from_dict(d: dict) -> ArchSpec:
    d = dict(d)
    try:
        stem = d.pop("stem", None)
        if stem is not None:
            unknown = set(stem) - _STEM_KEYS
            if unknown:
                raise ConfigError(f"unknown stem keys: {sorted(unknown)}")
            stem = StemSpec(**stem)
        stages = []
        for raw in d.pop("stages", []):
            raw = {_STAGE_ALIASES.get(k, k): v for k, v in raw.items()}
            stages.append(StageSpec(**raw))
        return ArchSpec(stem=stem, stages=tuple(stages), **d)
    except TypeError as exc:
        raise ConfigError(f"invalid architecture description: {exc}") from None


def spec_to_dict(spec: ArchSpec) -> dict:
    d = {
        "name": spec.name,
        "activation": spec.activation.value,
        "use_skip": spec.use_skip,
        "use_bn": spec.use_bn,
        "init": spec.init.value,
        "input_size": spec.input_size,
        "bn_mode": spec.bn_mode,
    }
    if spec.truncate_after_stage is not None:
        d["truncate_after_stage"] = spec.truncate_after_stage
    if spec.num_classes is not None:
        d["num_classes"] = spec.num_classes
    if spec.stem is not None:
        d["stem"] = {k: v for k, v in dataclasses.asdict(spec.stem).items() if v is not None}
    d["stages"] = [
        {"block": s.block_kind, "blocks": s.block_count, "out_channels": s.out_channels,
         "downsample": s.downsample, "kernel": s.kernel, "pool_kernel": s.pool_kernel,
         "pool_stride": s.pool_stride}
        for s in spec.stages
    ]
    return d


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    return str(v)


def dumps(spec: ArchSpec) -> str:
    d = spec_to_dict(spec)
    lines = []
    for k, v in d.items():
        if k not in ("stem", "stages"):
            lines.append(f"{k} = {_toml_value(v)}")
    if "stem" in d:
        lines += ["", "[stem]"] + [f"{k} = {_toml_value(v)}" for k, v in d["stem"].items()]
    for st in d["stages"]:
        lines += ["", "[[stages]]"] + [f"{k} = {_toml_value(v)}" for k, v in st.items()]
    return "\n".join(lines) + "\n"


def loads(text: str) -> ArchSpec:
    try:
        return spec_from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"architecture file is not valid TOML: {exc}") from None


def load(path) -> ArchSpec:
    return loads(Path(path).read_text())


def preset_names() -> list[str]:
    files = resources.files("tobias.net") / "presets"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".toml"))


def preset(name: str, **overrides) -> ArchSpec:
    """Load a shipped preset, optionally replacing top-level fields."""
    path = resources.files("tobias.net") / "presets" / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    spec = loads(path.read_text())
    return spec.replace(**overrides) if overrides else spec


def resolve(name_or_path, **overrides) -> ArchSpec:
    """A preset name or a path to an architecture file."""
    p = Path(str(name_or_path))
    spec = load(p) if p.suffix == ".toml" or p.exists() else preset(str(name_or_path))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return spec.replace(**overrides) if overrides else spec


def with_blocks(spec: ArchSpec, counts, name=None) -> ArchSpec:
    """Same architecture with different per-stage block counts."""
    if len(counts) != len(spec.stages):
        raise ConfigError(f"expected {len(spec.stages)} block counts, got {len(counts)}")
    stages = tuple(replace(s, block_count=int(c)) for s, c in zip(spec.stages, counts))
    return spec.replace(stages=stages, name=name or spec.name)


__all__ = ["ArchSpec", "StageSpec", "StemSpec", "dumps", "load", "loads", "preset",
           "preset_names", "resolve", "spec_from_dict", "spec_to_dict", "with_blocks"]
