"""Second-view sampling: with probability ``p`` the view is built from a merge."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tobias.augment.patches import MergedView, merge, mixup, random_merge, sample_mixup_lambda
from tobias.errors import ConfigError
from tobias.tensor.rng import RngState

MERGE_MODES = ("tobias", "random", "mixup")


@dataclass
class ViewPool:
    """Images at working resolution plus their masks, indexed by image id."""

    images: list
    masks: object = None  # MaskCache or a sequence of 4x4 masks

    def __len__(self):
        return len(self.images)


def merge_pair(pool: ViewPool, k: int, m: int, rng: RngState, mode="tobias"):
    xk, xm = pool.images[k], pool.images[m]
    if mode == "tobias":
        if pool.masks is None:
            raise ConfigError("merge mode 'tobias' needs precomputed masks (run `tobias masks`)")
        return merge(xk, pool.masks[k], xm, pool.masks[m], rng, k, m)
    if mode == "random":
        return random_merge(xk, xm, rng, k, m)
    if mode == "mixup":
        lam = sample_mixup_lambda(rng, 1.0)
        return MergedView(mixup(xk, xm, lam), k, m, (), np.zeros((4, 4), dtype=bool))
    raise ConfigError(f"unknown merge mode {mode!r}; choose from {MERGE_MODES}")


def sample_view(k: int, pool: ViewPool, p: float, rng: RngState, pipeline,
                exclude_self=False, mode="tobias"):
    """Return ``(view, merged)`` for image ``k`` of ``pool``.

    With probability ``1 - p`` the view is ``pipeline(x_k)`` and ``merged`` is
    None.  Otherwise a partner ``m`` is drawn uniformly from the whole pool
    (``m == k`` allowed unless ``exclude_self``) and the view is
    ``pipeline(merge(x_k, x_m))``.  The coin is always drawn from ``rng``, so
    ``pipeline`` sees the same sequence of calls whatever ``p`` is.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"merge probability must lie in [0, 1], got {p}")
    n = len(pool)
    if p > 0 and n - int(exclude_self) < 1:
        raise ConfigError("cannot merge from an empty pool")
    if rng.random() >= p:
        return pipeline(pool.images[k]), None
    if exclude_self:
        m = int(rng.integers(0, n - 1))
        m += m >= k
    else:
        m = int(rng.integers(0, n))
    merged = merge_pair(pool, k, m, rng, mode)
    return pipeline(merged.image), merged
