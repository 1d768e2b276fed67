"""Seed derivation helpers.

All randomness in the package flows from one integer seed; components get
independent ``numpy.random.Generator`` streams keyed by a name or index.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def derive_rng(seed, *parts):
    """Return a PCG64 generator for the stream ``(seed, *parts)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(p) for p in parts]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed, *parts):
    """Integer sub-seed for ``(seed, *parts)``, stable across runs."""
    return int(derive_rng(seed, *parts).integers(0, 2**31 - 1))
