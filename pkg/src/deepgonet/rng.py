"""Seeded random streams.

Each consumer (initialisation, dropout, shuffling) draws from its own
Philox4x64 counter-based generator keyed by (seed, stream id), so adding
draws to one stream never shifts another.
"""

import numpy as np

STREAMS = {"init": 1, "dropout": 2, "shuffle": 3, "split": 4, "data": 5}


def make_rng(seed: int, stream: str) -> np.random.Generator:
    key = (int(seed) & 0xFFFF_FFFF_FFFF_FFFF) | (STREAMS[stream] << 64)
    return np.random.Generator(np.random.Philox(key=key))
