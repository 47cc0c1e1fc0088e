"""Deterministic random-stream plumbing.

Every stochastic routine in this package takes an explicit
``numpy.random.Generator``.  Ensembles derive one independent child stream
per member from a single master seed via ``SeedSequence`` spawn keys, so
member k always sees the same stream no matter how many workers run or in
which order members are dispatched.
"""

import numpy as np


def master_rng(seed):
    """Generator for a single-run experiment."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def child_rng(seed, k):
    """Independent generator for ensemble member ``k`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def child_rngs(seed, n):
    """List of ``n`` independent member generators."""
    return [child_rng(seed, k) for k in range(n)]
