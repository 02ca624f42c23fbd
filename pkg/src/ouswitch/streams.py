"""Reproducible random streams for data-parallel Monte Carlo.

Every replicate gets its own counter-based Philox stream keyed by
(seed, purpose tag, replicate index).  Streams are independent of how
replicates are scheduled across workers, so output is bit-identical for
any thread count, and adding replicates never perturbs existing ones.
"""

from __future__ import annotations

import numpy as np

# Purpose tags keep streams for different uses of the same seed disjoint.
TRAJECTORY = 0
CYCLES = 1
MIXTURE = 2
LIMITS = 3
TAILINDEX = 4
EULER = 5


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator keyed by ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def replicate_streams(seed: int, purpose: int, n: int) -> list[np.random.Generator]:
    """Streams for replicates 0..n-1 of one purpose."""
    return [substream(seed, purpose, k) for k in range(n)]


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive n child generators from an existing generator's seed sequence."""
    seq = rng.bit_generator.seed_seq
    return [np.random.Generator(np.random.Philox(child)) for child in seq.spawn(n)]
