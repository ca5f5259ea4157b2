"""Deterministic RNG derivation.

All randomness in the package flows through `rng_for`, which derives an
independent PCG64 stream from a tuple of keys (ints and short strings).
Nothing keeps RNG state between calls, so any step of any pipeline can be
reproduced from its key tuple alone; resuming a run needs only counters.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"rng keys must be non-negative, got {key}")
        return int(key)
    raise TypeError(f"rng key must be int or str, got {type(key).__name__}")


def rng_for(*keys: int | str) -> np.random.Generator:
    """Return a Generator seeded purely by the key tuple."""
    if not keys:
        raise ValueError("rng_for needs at least one key")
    seq = np.random.SeedSequence([_key_to_int(k) for k in keys])
    return np.random.Generator(np.random.PCG64(seq))
