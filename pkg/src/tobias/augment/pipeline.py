"""Photometric and geometric view transforms.

Each transform owns a named child stream of the pipeline's root rng, so
dropping one transform leaves the draws of every other unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from tobias.errors import ConfigError
from tobias.images.transforms import resize_bilinear
from tobias.tensor.rng import RngState, as_rng

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def _gray(img: np.ndarray) -> np.ndarray:
    return img @ _LUMA


@dataclass(frozen=True)
class RandomResizedCrop:
    size: int
    scale: tuple[float, float] = (0.2, 1.0)
    ratio: tuple[float, float] = (3 / 4, 4 / 3)
    name: str = "crop"

    def __call__(self, img, rng: RngState):
        h, w = img.shape[:2]
        area = h * w
        log_ratio = (math.log(self.ratio[0]), math.log(self.ratio[1]))
        for _ in range(10):
            target = area * rng.uniform(*self.scale)
            aspect = math.exp(rng.uniform(*log_ratio))
            cw = int(round(math.sqrt(target * aspect)))
            ch = int(round(math.sqrt(target / aspect)))
            if 0 < cw <= w and 0 < ch <= h:
                top = int(rng.integers(0, h - ch + 1))
                left = int(rng.integers(0, w - cw + 1))
                break
        else:  # central crop at the clamped aspect ratio
            aspect = w / h
            if aspect < self.ratio[0]:
                cw, ch = w, int(round(w / self.ratio[0]))
            elif aspect > self.ratio[1]:
                ch, cw = h, int(round(h * self.ratio[1]))
            else:
                cw, ch = w, h
            top, left = (h - ch) // 2, (w - cw) // 2
        return resize_bilinear(img[top:top + ch, left:left + cw], (self.size, self.size))


@dataclass(frozen=True)
class HorizontalFlip:
    p: float = 0.5
    name: str = "flip"

    def __call__(self, img, rng: RngState):
        return img[:, ::-1].copy() if rng.random() < self.p else img


@dataclass(frozen=True)
class ColorJitter:
    """Brightness, contrast and saturation scaling, applied with probability ``p``."""

    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    p: float = 0.8
    name: str = "jitter"

    def __call__(self, img, rng: RngState):
        apply = rng.random() < self.p
        # factors are always drawn so the stream advances the same way either way
        b, c, s = (rng.uniform(max(0.0, 1 - f), 1 + f)
                   for f in (self.brightness, self.contrast, self.saturation))
        if not apply:
            return img
        out = img * np.float32(b)
        out = (out - _gray(out).mean()) * np.float32(c) + _gray(out).mean()
        g = _gray(out)[..., None]
        out = (out - g) * np.float32(s) + g
        return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class Grayscale:
    p: float = 0.2
    name: str = "gray"

    def __call__(self, img, rng: RngState):
        if rng.random() < self.p:
            return np.repeat(_gray(img)[..., None], 3, axis=2).astype(np.float32)
        return img


TRANSFORMS = {"crop": RandomResizedCrop, "flip": HorizontalFlip,
              "jitter": ColorJitter, "gray": Grayscale}


def default_transforms(size: int):
    return [RandomResizedCrop(size), HorizontalFlip(), ColorJitter(), Grayscale()]


class AugmentationPipeline:
    """An ordered list of transforms, each drawing from its own rng stream."""

    def __init__(self, transforms, rng: RngState | int):
        self.transforms = list(transforms)
        names = [t.name for t in self.transforms]
        if len(set(names)) != len(names):
            raise ConfigError(f"transform names must be unique, got {names}")
        root = as_rng(rng)
        self.streams = {t.name: root.stream(f"transform.{t.name}") for t in self.transforms}

    @classmethod
    def from_names(cls, names, size: int, rng, crop_scale=(0.2, 1.0)):
        unknown = [n for n in names if n not in TRANSFORMS]
        if unknown:
            raise ConfigError(f"unknown transforms {unknown}; choose from {sorted(TRANSFORMS)}")
        made = [RandomResizedCrop(size, tuple(crop_scale)) if n == "crop" else TRANSFORMS[n]() for n in names]
        return cls(made, rng)

    def __call__(self, img: np.ndarray) -> np.ndarray:
        out = np.asarray(img, dtype=np.float32)
        for t in self.transforms:
            out = t(out, self.streams[t.name])
        return np.ascontiguousarray(out, dtype=np.float32)

    def without(self, name: str) -> "AugmentationPipeline":
        """A fresh pipeline with the same root, minus one transform."""
        clone = object.__new__(AugmentationPipeline)
        clone.transforms = [t for t in self.transforms if t.name != name]
        clone.streams = {t.name: RngState(self.streams[t.name].seed, self.streams[t.name].path)
                         for t in clone.transforms}
        return clone

    def get_state(self) -> dict:
        return {name: s.get_state() for name, s in self.streams.items()}

    def set_state(self, state: dict) -> None:
        for name, s in self.streams.items():
            s.set_state(state[name])
