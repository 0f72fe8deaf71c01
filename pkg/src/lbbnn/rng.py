"""Seeded, splittable random streams built on the counter-based Philox generator."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class RngStream:
    """Deterministic random source.

    Identical seeds give identical draw sequences on every platform numpy
    supports. :meth:`spawn` derives independent child streams, e.g. one per
    parallel worker.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self.seed = self._seq.entropy
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def spawn(self, n: int) -> list["RngStream"]:
        return [RngStream(s) for s in self._seq.spawn(n)]

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def bernoulli(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
            raise ValueError("bernoulli probabilities must lie in [0, 1]")
        return (self._gen.random(p.shape) < p).astype(np.float64)


def sample_gaussian(shape, rng: RngStream) -> Tensor:
    """Standard normal draws as a constant tensor."""
    return Tensor(rng.normal(shape))


def sample_bernoulli(p, rng: RngStream) -> Tensor:
    p = p.data if isinstance(p, Tensor) else p
    return Tensor(rng.bernoulli(p))


def derive_seed(seed: int, *key: int) -> int:
    """Independent 32-bit seed for the sub-task ``key`` of run ``seed``."""
    state = np.random.SeedSequence([int(seed), *map(int, key)]).generate_state(1, np.uint32)
    return int(state[0])
