"""
Stream-split seeding for reproducible Monte-Carlo draws.

Every random draw in the simulator is keyed by (base seed, purpose, indices),
so a single trial, drop or UE can be regenerated in isolation.
"""

import numpy as np

# Purpose keys (first element of every spawn key)
GEOMETRY = 0
CHANNEL = 1
PILOT_NOISE = 2
PILOTS = 3
KMEANS = 4
SWITCHING = 5
DROP = 6


def _seed_sequence(seed: int, keys: tuple) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"Seeds must be non-negative, got {seed}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return an independent generator for the stream identified by keys."""
    return np.random.default_rng(_seed_sequence(seed, keys))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a 64-bit child seed, e.g. the seed of one network drop."""
    state = _seed_sequence(seed, keys).generate_state(1, dtype=np.uint64)
    return int(state[0])
