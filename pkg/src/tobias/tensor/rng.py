"""Explicit, seedable random state.

Every consumer of randomness receives an :class:`RngState`; nothing in the
package touches numpy's global generator.  Named child streams are derived
from the root seed with a stable hash, so adding or removing one consumer
never shifts the draws seen by another.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class RngState:
    """A PCG64 generator plus the seed path that produced it."""

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, path={self.path})"

    def stream(self, name: str) -> "RngState":
        """Return an independent child stream keyed by ``name``.

        The child depends only on (seed, path, name), never on how many
        draws the parent has made.
        """
        return RngState(self.seed, self.path + (_name_key(name),))

    # thin draw helpers; all go through the one generator
    def normal(self, loc=0.0, scale=1.0, size=None, dtype=np.float64):
        out = self.generator.standard_normal(size=size, dtype=np.float64)
        return (np.asarray(out) * scale + loc).astype(dtype, copy=False)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size=size)

    def random(self, size=None):
        return self.generator.random(size=size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def beta(self, a, b, size=None):
        return self.generator.beta(a, b, size=size)

    def get_state(self) -> dict:
        return {
            "seed": self.seed,
            "path": list(self.path),
            "bit_generator": self.generator.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self.path = tuple(state["path"])
        self.generator.bit_generator.state = state["bit_generator"]

    @classmethod
    def from_state(cls, state: dict) -> "RngState":
        rng = cls(state["seed"], tuple(state["path"]))
        rng.generator.bit_generator.state = state["bit_generator"]
        return rng


def as_rng(rng: RngState | int) -> RngState:
    if isinstance(rng, RngState):
        return rng
    return RngState(int(rng))
