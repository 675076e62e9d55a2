"""Deterministic random-stream derivation.

Every randomized operation draws from a generator derived from a master seed
plus a structured key, so adding validation points or reordering work never
perturbs draws made for earlier keys.
"""

from __future__ import annotations

import numpy as np

# Stream tags; keys are (tag, validation_index[, owner_index, ...]).
TAG_DATA = 1
TAG_CORRUPT = 2
TAG_SUBSAMPLE = 3
TAG_NOISE = 4
TAG_SHADOW = 5
TAG_SCORE_IN = 6
TAG_SCORE_OUT = 7
TAG_SCORE_OBS = 8


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for (seed, key...); identical keys give identical streams."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def substream_seed(seed: int, *key: int) -> int:
    """A derived integer seed, for APIs that take a seed rather than a generator."""
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1, np.uint64)[0] >> 1)
