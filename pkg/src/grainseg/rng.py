"""Seedable deterministic random source.

Wraps numpy's PCG64 generator: the same 64-bit seed produces a
bit-identical stream on every platform and run, which is what checkpoint
reproducibility and the synthetic-data generator rely on.
"""

import numpy as np


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def child(self, key: int) -> "Rng":
        """Independent substream, deterministic in (seed, key)."""
        rng = Rng.__new__(Rng)
        rng.seed = self.seed
        seq = np.random.SeedSequence(self.seed, spawn_key=(int(key),))
        rng._gen = np.random.Generator(np.random.PCG64(seq))
        return rng

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)
