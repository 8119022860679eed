"""Deterministic named sub-seeding.

Every source of randomness in a run (sampling, weight init, batch shuffles)
derives its generator from a single master seed plus a purpose label, so a
component can be reproduced in isolation from the same run seed.
"""

import zlib

import numpy as np


def sub_seed(seed: int, label: str, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(label.encode()), int(index)])


def sub_rng(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Generator for ``label`` (e.g. "init", "batch") under a master seed."""
    return np.random.default_rng(sub_seed(seed, label, index))
