"""Deterministic seed partitioning.

Every stochastic step gets its own generator keyed by ``(seed, *path)`` so
results do not depend on execution order or on the number of workers.
"""

import numpy as np


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in path))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *path: int) -> int:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
