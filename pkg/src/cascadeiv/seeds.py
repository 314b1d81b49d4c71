"""Deterministic seed derivation for replications and sub-streams.

Replication r of a run with master seed s uses ``derive_seed(s, r)``. The
mixing function is the splitmix64 finalizer, so derived seeds are bit-exact
across platforms and independent of evaluation order:

    MASK   = 2**64 - 1
    GOLDEN = 0x9E3779B97F4A7C15

    mix(x): x = (x + GOLDEN) & MASK
            x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK
            x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK
            return x ^ (x >> 31)

    derive_seed(master, i1, i2, ...):
        h = mix(master & MASK)
        for each index i:  h = mix((h + GOLDEN + mix(i & MASK)) & MASK)
        return h
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One application of the splitmix64 mixing function (64-bit)."""
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master: int, *indices: int) -> int:
    """Derive a 64-bit sub-seed from a master seed and stream indices."""
    h = splitmix64(master & _MASK)
    for ix in indices:
        h = splitmix64((h + _GOLDEN + splitmix64(ix & _MASK)) & _MASK)
    return h


def rng_for(master: int, *indices: int) -> np.random.Generator:
    """Generator seeded by ``derive_seed(master, *indices)``."""
    return np.random.default_rng(derive_seed(master, *indices))
