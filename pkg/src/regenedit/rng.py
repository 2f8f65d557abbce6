"""Deterministic randomness.

Every stochastic draw in the package goes through SeededRng, which wraps
numpy's counter-based Philox bit generator.  Identical seed + identical call
sequence gives identical streams on every platform; OS entropy is never
touched.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(base_seed: int, *labels) -> int:
    """Stable 63-bit child seed from a base seed and a label path.

    Used to hand independent, reproducible streams to sub-tasks (one per
    image, per worker, ...) without coordinating counters.
    """
    h = hashlib.sha256()
    h.update(str(int(base_seed)).encode("utf-8"))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


class SeededRng:
    """Counter-based random stream with an explicit seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, dims) -> np.ndarray:
        """I.i.d. standard-normal float32 array of the given shape."""
        return self._gen.standard_normal(size=tuple(dims), dtype=np.float32)

    def uniform(self) -> float:
        return float(self._gen.random())

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def spawn(self, *labels) -> "SeededRng":
        """Independent child stream; deterministic in (seed, labels)."""
        return SeededRng(derive_seed(self.seed, *labels))


def normal_sample(rng: SeededRng, dims) -> np.ndarray:
    """Draw a standard-normal tensor; deterministic given rng's seed."""
    return rng.normal(dims)
