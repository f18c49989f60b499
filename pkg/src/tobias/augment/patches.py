"""4x4 patch grids, background swapping and mixup."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tobias.errors import ConfigError, DimensionError, InvariantError
from tobias.tensor.rng import RngState

GRID = 4
FOREGROUND_CELLS = GRID * GRID // 2


def patch_side(shape) -> int:
    h, w = shape[:2]
    if h != w or h % GRID:
        raise DimensionError(f"patch splitting needs a square image with side divisible by {GRID}, got {h}x{w}")
    return h // GRID


def split_patches(image: np.ndarray) -> np.ndarray:
    """``(S, S, C)`` image -> ``(4, 4, r, r, C)`` grid with ``r = S / 4``.

    Patch ``(i, j)`` holds rows ``i*r .. (i+1)*r - 1`` and the matching columns.
    """
    image = np.asarray(image)
    r = patch_side(image.shape)
    c = image.shape[2:]
    return np.ascontiguousarray(image.reshape((GRID, r, GRID, r) + c).swapaxes(1, 2))


def assemble_patches(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid)
    g, _, r = grid.shape[:3]
    c = grid.shape[4:]
    return np.ascontiguousarray(grid.swapaxes(1, 2).reshape((g * r, g * r) + c))


def top_half_mask(a: np.ndarray) -> np.ndarray:
    """Ones at the 8 largest cells of a 4x4 map.

    Ties are broken by row-major order, the earlier cell winning, so a
    constant map selects the first 8 cells.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (GRID, GRID):
        raise DimensionError(f"patch masks are {GRID}x{GRID}, got map of shape {a.shape}")
    order = np.argsort(-a.ravel(), kind="stable")
    m = np.zeros(GRID * GRID, dtype=bool)
    m[order[:FOREGROUND_CELLS]] = True
    return m.reshape(GRID, GRID)


def check_mask(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=bool)
    if m.shape != (GRID, GRID):
        raise InvariantError(f"patch mask must be {GRID}x{GRID}, got {m.shape}")
    count = int(m.sum())
    if count != FOREGROUND_CELLS:
        raise InvariantError(f"patch mask has {count} foreground cells, expected {FOREGROUND_CELLS}")
    return m


@dataclass(frozen=True)
class MergedView:
    """A foreground-preserving merge and its provenance.

    ``sigma`` lists ``(target, source)`` pairs of flat cell indices: background
    cell ``target`` of the output holds background patch ``source`` of the
    background image.
    """

    image: np.ndarray
    fg_source: int | None
    bg_source: int | None
    sigma: tuple[tuple[int, int], ...]
    fg_mask: np.ndarray

    def to_dict(self) -> dict:
        return {"fg": self.fg_source, "bg": self.bg_source,
                "sigma": [list(p) for p in self.sigma],
                "fg_mask": [int(v) for v in self.fg_mask.ravel()]}


def merge(x1: np.ndarray, m1, x2: np.ndarray, m2, rng: RngState,
          fg_source=None, bg_source=None) -> MergedView:
    """Keep ``x1``'s foreground patches; fill its background cells with ``x2``'s
    background patches in an rng-drawn order."""
    m1, m2 = check_mask(m1), check_mask(m2)
    x1, x2 = np.asarray(x1), np.asarray(x2)
    if x1.shape != x2.shape:
        raise DimensionError(f"cannot merge images of shapes {x1.shape} and {x2.shape}")
    g1, g2 = split_patches(x1), split_patches(x2)
    targets = np.flatnonzero(~m1.ravel())
    sources = np.flatnonzero(~m2.ravel())[rng.permutation(FOREGROUND_CELLS)]
    out = g1.reshape((GRID * GRID,) + g1.shape[2:]).copy()
    out[targets] = g2.reshape(out.shape)[sources]
    merged = assemble_patches(out.reshape(g1.shape))
    sigma = tuple((int(t), int(s)) for t, s in zip(targets, sources))
    return MergedView(merged, fg_source, bg_source, sigma, m1)


def random_half_mask(rng: RngState) -> np.ndarray:
    """Uniformly random 8-of-16 cell mask."""
    m = np.zeros(GRID * GRID, dtype=bool)
    m[rng.permutation(GRID * GRID)[:FOREGROUND_CELLS]] = True
    return m.reshape(GRID, GRID)


def random_merge(x1, x2, rng: RngState, fg_source=None, bg_source=None) -> MergedView:
    """Merge with random half-half masks in place of network masks."""
    m1 = random_half_mask(rng)
    m2 = random_half_mask(rng)
    return merge(x1, m1, x2, m2, rng, fg_source, bg_source)


def sample_mixup_lambda(rng: RngState, alpha: float = 1.0) -> float:
    if alpha <= 0:
        raise ConfigError(f"mixup alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mixup(x1: np.ndarray, x2: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination ``lam * x1 + (1 - lam) * x2``."""
    x1, x2 = np.asarray(x1), np.asarray(x2)
    if x1.shape != x2.shape:
        raise DimensionError(f"mixup needs equal shapes, got {x1.shape} and {x2.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixup lambda must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return x1.copy()
    if lam == 0.0:
        return x2.copy()
    dtype = np.result_type(x1.dtype, x2.dtype, np.float32)
    return (lam * x1 + (1.0 - lam) * x2).astype(dtype)
