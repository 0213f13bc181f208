"""Seeded, splittable random streams.

Each :class:`Rng` is keyed by ``(seed, stream, *path)`` and backed by a
Philox counter-based generator, so two objects with the same key produce
the same draws and distinct keys behave as independent streams.
"""
from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int, stream: int = 0, path: tuple[int, ...] = ()):
        if seed < 0 or stream < 0 or any(p < 0 for p in path):
            raise ValueError("seed, stream and path entries must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *self.path))
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "Rng":
        """Independent sub-stream, e.g. one per simulated user."""
        return Rng(self.seed, self.stream, self.path + (index,))

    def random(self, size=None):
        return self.gen.random(size)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream}, path={self.path})"
