"""Seeded, injectable random streams."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

_SEED_LIMIT = 2**64


def derive_seed(master: int, *path: int) -> int:
    """Deterministic 64-bit child seed for ``master`` and an index path."""
    if not 0 <= master < _SEED_LIMIT:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {master!r}")
    ss = np.random.SeedSequence([int(master), *map(int, path)])
    return int(ss.generate_state(1, np.uint64)[0])


class RandomSource:
    """A reproducible stream of uniform reals in ``[0, 1)``.

    Backed by PCG64, so equal seeds give equal streams on every platform.
    Pass instances explicitly; nothing in the package draws from a global
    generator.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < _SEED_LIMIT:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def __repr__(self):
        return f"RandomSource(seed={self.seed})"

    def random(self) -> float:
        return float(self._gen.random())

    def random_array(self, n: int) -> np.ndarray:
        return self._gen.random(int(n))

    def bits(self, n: int) -> np.ndarray:
        """``n`` fair bits as ``int8``, one uniform draw each."""
        return (self._gen.random(int(n)) < 0.5).astype(np.int8)

    def spawn(self, *path: int) -> "RandomSource":
        return RandomSource(derive_seed(self.seed, *path))
