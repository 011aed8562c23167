"""Seeded random streams shared by every randomized experiment."""

import numpy as np

RNG_NAME = "numpy.PCG64"


def make_rng(seed: int) -> np.random.Generator:
    """Same seed, same stream, on every platform numpy supports."""
    return np.random.Generator(np.random.PCG64(seed))
