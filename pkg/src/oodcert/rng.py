"""Counter-based random streams keyed by (seed, stream ids).

Every stochastic component of the pipeline derives its randomness from one
64-bit experiment seed plus integer stream identifiers (sample index, epoch,
worker id, ...).  Streams are independent Philox generators, so results do
not depend on scheduling order or worker count.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stream", "spawn_seed"]


def stream(seed: int, *ids: int) -> np.random.Generator:
    """Return an independent generator for the given (seed, ids...) key.

    The same key always yields the same sequence; distinct keys yield
    statistically independent Philox streams.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(i) for i in ids))
    return np.random.Generator(np.random.Philox(ss))


def spawn_seed(seed: int, *ids: int) -> int:
    """Derive a 64-bit sub-seed for handing to a component that seeds itself."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(int(i) for i in ids))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
