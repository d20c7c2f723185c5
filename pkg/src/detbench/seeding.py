"""Seed derivation.

Every random draw in detbench comes from a generator keyed by a master seed
plus a path of integers (image index, kernel index, attempt...), so work can
be split across threads or processes without changing results.
"""

from __future__ import annotations

import os

import numpy as np

DEFAULT_SEED = 20250101
SEED_ENV = "DETBENCH_SEED"
_U64 = (1 << 64) - 1


def resolve_seed(seed=None) -> int:
    if seed is not None:
        return int(seed) & _U64
    env = os.environ.get(SEED_ENV)
    if env:
        return int(env, 0) & _U64
    return DEFAULT_SEED


def derive_seed(master: int, *path: int) -> int:
    """Mix ``master`` and ``path`` into a 64-bit seed (order-independent per index)."""
    ss = np.random.SeedSequence(entropy=int(master) & _U64, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master) & _U64, spawn_key=tuple(int(p) for p in path)))
