"""Seeded random streams.

Every work item draws from its own Philox (counter-based) stream keyed by
``(master_seed, *index)``, so results do not depend on scheduling order or
worker count.
"""
import numpy as np


def _entropy(seed):
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return int(seed)


def substream(seed, *index) -> np.random.Generator:
    """Independent generator for work item ``index`` under ``seed``."""
    ss = np.random.SeedSequence(_entropy(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))
