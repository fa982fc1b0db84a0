import numpy as np


def make_rng(seed, *keys):
    """Counter-based generator for ``seed`` and a path of integer stream keys.

    Distinct key paths give statistically independent streams, so callers can
    derive per-round or per-trial generators without sharing state.
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
