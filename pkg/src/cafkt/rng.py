"""Deterministic random-stream derivation.

Every stochastic decision in a run (data synthesis, partitioning, weight
init, batch shuffling, client sampling, uplink dropout, privacy noise) draws
from a generator derived from the top-level seed plus a stream tag and
context indices. Streams never share state, so results are independent of
execution order and of whether client rounds run serially or in parallel.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep derivation paths disjoint across subsystems.
STREAM_DATA = 1
STREAM_PARTITION = 2
STREAM_INIT = 3
STREAM_PRETRAIN = 4
STREAM_SAMPLING = 5
STREAM_CLIENT = 6
STREAM_DROPOUT = 7
STREAM_NOISE = 8


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Return the generator for the stream identified by (seed, *path)."""
    return np.random.default_rng([int(seed)] + [int(p) for p in path])


def derived_seed(seed: int, *path: int) -> int:
    """Stable integer seed for (seed, *path); useful for manifests."""
    seq = np.random.SeedSequence([int(seed)] + [int(p) for p in path])
    return int(seq.generate_state(1)[0])
