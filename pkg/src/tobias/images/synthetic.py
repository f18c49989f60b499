"""Synthetic textured-object corpus.

Each image is a flat or gently graded background with one axis-aligned
rectangle of high-frequency texture (a checkerboard or blocky noise).  The
ground-truth box is the rectangle itself; the label is the texture kind.
Image ``k`` gets background kind ``k % 2`` and label ``(k // 2) % 2``, so
with a count divisible by 4 both are exactly balanced and uncorrelated.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from tobias.errors import ConfigError
from tobias.images.codecs import as_uint8, save_image
from tobias.images.manifest import ManifestRecord, write_manifest
from tobias.tensor.rng import RngState

BACKGROUNDS = ("flat", "gradient")
FOREGROUNDS = ("checkerboard", "noise")


@dataclass(frozen=True)
class SyntheticSpec:
    canvas: int = 64
    size_range: tuple[float, float] = (0.35, 0.75)  # object side as a fraction of the canvas
    checker_cell: tuple[int, int] = (4, 8)
    noise_scale: tuple[int, int] = (2, 4)
    min_contrast: float = 0.5  # mean absolute channel difference of checker colors
    gradient_span: float = 0.3
    backgrounds: tuple[str, ...] = BACKGROUNDS
    foregrounds: tuple[str, ...] = FOREGROUNDS
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.size_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"size_range must satisfy 0 < lo <= hi <= 1, got {self.size_range}")
        if int(lo * self.canvas) < 1:
            raise ConfigError("smallest object would be under one pixel")
        for kinds, allowed in ((self.backgrounds, BACKGROUNDS), (self.foregrounds, FOREGROUNDS)):
            bad = [k for k in kinds if k not in allowed]
            if bad or not kinds:
                raise ConfigError(f"unknown kinds {bad}; choose from {allowed}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class SyntheticImage:
    image: np.ndarray  # uint8 HWC
    box: tuple[int, int, int, int]
    label: int
    background: str
    foreground: str


def _background(kind, spec: SyntheticSpec, rng: RngState):
    s = spec.canvas
    c0 = rng.uniform(0.15, 0.85, 3)
    if kind == "flat":
        return np.broadcast_to(c0, (s, s, 3)).copy()
    c1 = np.clip(c0 + rng.uniform(-spec.gradient_span, spec.gradient_span, 3), 0.0, 1.0)
    ang = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:s, 0:s] / (s - 1)
    t = np.cos(ang) * xx + np.sin(ang) * yy
    t = (t - t.min()) / (t.max() - t.min())
    return c0 * (1 - t[..., None]) + c1 * t[..., None]


def _texture(kind, h, w, spec: SyntheticSpec, rng: RngState):
    if kind == "checkerboard":
        cell = int(rng.integers(spec.checker_cell[0], spec.checker_cell[1] + 1))
        a = rng.uniform(0.0, 1.0, 3)
        b = rng.uniform(0.0, 1.0, 3)
        while np.abs(a - b).mean() < spec.min_contrast:
            b = rng.uniform(0.0, 1.0, 3)
        cb = ((np.arange(h)[:, None] // cell + np.arange(w)[None] // cell) % 2)[..., None]
        return a * cb + b * (1 - cb)
    scale = int(rng.integers(spec.noise_scale[0], spec.noise_scale[1] + 1))
    coarse = rng.uniform(0.0, 1.0, (h // scale + 1, w // scale + 1, 3))
    return np.repeat(np.repeat(coarse, scale, 0), scale, 1)[:h, :w]


def region_variances(img: np.ndarray, box) -> tuple[float, float]:
    """Mean per-channel pixel variance inside and outside ``box``."""
    x = np.asarray(img, dtype=np.float64) / (255.0 if img.dtype == np.uint8 else 1.0)
    x1, y1, x2, y2 = box
    inside = np.zeros(x.shape[:2], dtype=bool)
    inside[y1:y2 + 1, x1:x2 + 1] = True
    fg = x[inside].var(axis=0).mean()
    bg = x[~inside].var(axis=0).mean() if (~inside).any() else 0.0
    return float(fg), float(bg)


def synthesize(spec: SyntheticSpec, index: int) -> SyntheticImage:
    """Image ``index`` of the corpus; depends only on (spec, index)."""
    rng = RngState(spec.seed).stream(f"synthetic.{index}")
    s = spec.canvas
    bg_kind = spec.backgrounds[index % len(spec.backgrounds)]
    label = (index // 2) % len(spec.foregrounds)
    fg_kind = spec.foregrounds[label]
    lo, hi = int(spec.size_range[0] * s), int(spec.size_range[1] * s)
    while True:  # redraw until the texture is busier than the background
        img = _background(bg_kind, spec, rng)
        h = int(rng.integers(lo, hi + 1))
        w = int(rng.integers(lo, hi + 1))
        y0 = int(rng.integers(0, s - h + 1))
        x0 = int(rng.integers(0, s - w + 1))
        img[y0:y0 + h, x0:x0 + w] = _texture(fg_kind, h, w, spec, rng)
        out = as_uint8(img)
        box = (x0, y0, x0 + w - 1, y0 + h - 1)
        fg_var, bg_var = region_variances(out, box)
        if fg_var > bg_var:
            return SyntheticImage(out, box, label, bg_kind, fg_kind)


def generate_synthetic(spec: SyntheticSpec, count: int, out_dir=None):
    """Build ``count`` images; with ``out_dir``, also write ``images/`` and
    ``manifest.jsonl`` there.  Returns ``(records, images)``."""
    items = [synthesize(spec, k) for k in range(count)]
    records = [ManifestRecord(f"images/{k:05d}.ppm", it.box, it.label) for k, it in enumerate(items)]
    if out_dir is not None:
        out_dir = Path(out_dir)
        for rec, it in zip(records, items):
            save_image(out_dir / rec.image, it.image)
        write_manifest(out_dir / "manifest.jsonl", records)
    return records, [it.image for it in items]
