"""Seeded randomness.

Every random draw in the package descends from a single integer seed through
splitmix64.  Bulk Gaussian draws use a numpy ``PCG64`` generator whose state is
a splitmix64 output, so the whole chain is reproducible from the seed alone.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """Plain splitmix64 stream over Python ints (exact 64-bit wraparound)."""

    def __init__(self, seed: int) -> None:
        self.state = int(seed) & _MASK

    def next(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Unbiased integer in ``[0, bound)`` by rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next()
            if x < limit:
                return x % bound

    def uniform(self) -> float:
        """Float in ``[0, 1)`` from the top 53 bits."""
        return (self.next() >> 11) * (1.0 / (1 << 53))


def derive_seed(seed: int, *labels: int | str) -> int:
    """Derive an independent 64-bit sub-seed for a named purpose."""
    sm = SplitMix64(seed)
    out = sm.next()
    for label in labels:
        if isinstance(label, str):
            for byte in label.encode():
                sm = SplitMix64(out ^ byte)
                out = sm.next()
        else:
            sm = SplitMix64(out ^ (int(label) & _MASK))
            out = sm.next()
    return out


def numpy_generator(seed: int, *labels: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *labels)))


def fisher_yates(items, seed: int) -> list:
    """Return a shuffled copy of ``items`` (Durstenfeld variant, splitmix64 draws)."""
    out = list(items)
    sm = SplitMix64(derive_seed(seed, "shuffle"))
    for i in range(len(out) - 1, 0, -1):
        j = sm.below(i + 1)
        out[i], out[j] = out[j], out[i]
    return out
