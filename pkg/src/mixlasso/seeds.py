"""Deterministic derivation of subordinate RNG seeds.

All randomness in the package flows from a single master seed; child
streams are derived with fixed integer offsets through SeedSequence, so
parallel and serial schedules see identical streams.
"""

from __future__ import annotations

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit child seed for (seed, *keys), stable across runs."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
