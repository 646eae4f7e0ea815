"""Seed derivation via SplitMix64 so every random stream depends only on its keys."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (the state is advanced before mixing)."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(base: int, *keys: int) -> int:
    """Fold ``keys`` into ``base``: s <- splitmix64(s ^ splitmix64(key)) for each key."""
    s = splitmix64(int(base) & _MASK)
    for k in keys:
        s = splitmix64(s ^ splitmix64(int(k) & _MASK))
    return s


def stream(base: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base, *keys)))
