"""Counter-based seed splitting.

Every random stream derives from one 64-bit master seed and a tuple of
integer counters, e.g. ``stream(seed, STREAM_SIM, replicate_block)``. The
streams are independent Philox generators keyed through ``SeedSequence``.
"""
from __future__ import annotations

import zlib

import numpy as np

SCHEME = "philox-seedsequence-v1"


def _as_key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def stream(seed: int, *counters) -> np.random.Generator:
    """Return the generator for ``(seed, *counters)``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(_as_key(c) for c in counters))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(0 if seed is None else seed)
