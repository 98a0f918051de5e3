"""Seeded random streams with labeled sub-seeding.

Every consumer (data sampling, dropout, gumbel noise, policy sampling, ...)
gets its own child stream derived from the root seed and a label path, so
adding a new consumer never perturbs the draws of existing ones.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _derive(seed: int, path: str) -> int:
    digest = hashlib.sha256(f"{seed}|{path}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Deterministic random stream keyed by (seed, label path)."""

    def __init__(self, seed: int, _path: str = "root"):
        self.seed = int(seed)
        self.path = _path
        self._gen = np.random.default_rng(_derive(self.seed, self.path))

    def child(self, label: str) -> "Rng":
        """Independent stream for a named sub-component."""
        return Rng(self.seed, f"{self.path}/{label}")

    def normal(self, shape=(), loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc, scale, size=shape)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def gumbel(self, shape=()) -> np.ndarray:
        # -log(-log(U)) with U clamped away from {0,1}, matching the noisy-gate recipe.
        u = np.clip(self._gen.random(size=shape), 1e-6, 1.0 - 1e-6)
        return -np.log(-np.log(u))

    def categorical(self, p: np.ndarray) -> int:
        p = np.asarray(p, dtype=np.float64)
        return int(self._gen.choice(len(p), p=p / p.sum()))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
