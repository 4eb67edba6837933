"""Deterministic seed derivation.

All stochastic components draw from numpy generators seeded through
:func:`derive_seed`, a splitmix64 finalizer over (seed, index). Derived
streams are independent of evaluation order, so a batch of Monte-Carlo
samples or per-image evaluations produces identical results whether it
runs serially or across worker threads.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15


def derive_seed(seed: int, index: int) -> int:
    """Mix a base seed with a stream index into a new 64-bit seed."""
    z = (seed + (index + 1) * _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def rng_for(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for stream `index` of `seed`."""
    return np.random.default_rng(derive_seed(seed, index))
