"""
Seeded pseudo-random source.

Algorithm: numpy ``PCG64`` bit generator seeded through ``SeedSequence(entropy=seed,
spawn_key=keys)``. ``RandomStream(seed).split(k1, k2, ...)`` derives an independent
child whose spawn key is the parent key extended by ``(k1, k2, ...)``; children never
consume draws from the parent, so splitting is order independent. Bit reproducibility
holds for one numpy build configuration.
"""

import logging
from typing import Tuple

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "RandomStream",
    "gaussian_draws",
    "minibatch_indices",
]


class RandomStream:
    """
    Single-owner stream of random draws.

    Identical ``(seed, key)`` pairs produce identical draw sequences.
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"Seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.key)))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, key={self.key})"

    def split(self, *keys: int) -> "RandomStream":
        """Derive an independent sub-stream keyed by ``keys``."""
        return RandomStream(self.seed, self.key + tuple(keys))

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def normal(self, size) -> np.ndarray:
        return self._generator.standard_normal(size)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._generator.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def integers(self, high: int, size=None):
        return self._generator.integers(0, high, size)

    def sklearn_seed(self) -> int:
        """A 32-bit integer seed for libraries that take ``random_state`` ints."""
        return int(self._generator.integers(0, 2**31 - 1))


def gaussian_draws(stream: RandomStream, n: int) -> np.ndarray:
    """Return ``n`` i.i.d. standard-normal variates from ``stream``."""
    if n < 0:
        raise ValueError(f"Number of draws must be non-negative, got {n}")
    return stream.normal(n)


def minibatch_indices(stream: RandomStream, step: int, n: int, batch_size: int) -> np.ndarray:
    """
    Row indices of minibatch ``step`` when every epoch walks a fresh permutation.

    Epoch ``e`` uses ``stream.split(0, e)``, so any step can be reproduced without replaying
    earlier ones. The last batch of an epoch is shorter when ``batch_size`` does not divide ``n``.
    """
    if batch_size < 1 or batch_size > n:
        raise ValueError(f"Batch size must be in 1..{n}, got {batch_size}")
    if batch_size == n:
        return np.arange(n)
    per_epoch = -(-n // batch_size)
    epoch, pos = divmod(step, per_epoch)
    order = stream.split(0, epoch).permutation(n)
    return order[pos * batch_size : (pos + 1) * batch_size]
