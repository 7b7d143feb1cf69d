"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(master_seed, replica)``; the
high word of the 256-bit counter selects an independent substream (initial
data, dynamics, bootstrap, ...).  Two streams with different keys or
substreams never overlap, and a stream's output does not depend on which
thread or in which order it is consumed.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# substream identifiers
INITIAL = 0
DYNAMICS = 1
REFERENCE = 2
BOOTSTRAP = 3
ORACLE = 4


def stream(master_seed: int, replica: int = 0, substream: int = 0) -> np.random.Generator:
    """Return the generator for ``(master_seed, replica, substream)``."""
    if master_seed < 0 or replica < 0 or substream < 0:
        raise ValueError("seeds, replica and substream indices must be nonnegative")
    key = np.array([master_seed & MASK64, replica & MASK64], dtype=np.uint64)
    counter = np.array([0, 0, 0, substream & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return stream(0)
    return stream(int(rng))
