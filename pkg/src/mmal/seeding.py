"""Deterministic RNG derivation: every generator traces back to one master
seed plus an integer path, so runs are reproducible end to end."""

from __future__ import annotations

import numpy as np

_MASK = 2**64 - 1


def _sequence(master: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master & _MASK, *(p & _MASK for p in path)])


def spawn_rng(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(_sequence(master, *path))


def derive_seed(master: int, *path: int) -> int:
    return int(_sequence(master, *path).generate_state(1, np.uint64)[0])
