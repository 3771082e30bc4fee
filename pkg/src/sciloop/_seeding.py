"""Deterministic RNG streams derived from run seeds and string tags.

Strings are folded in via crc32 so stream derivation is stable across
processes and platforms (``hash()`` is salted per interpreter).
"""

import zlib

import numpy as np


def _fold(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    raise TypeError(f"seed parts must be str or int, got {type(part)!r}")


def stream(*parts) -> np.random.Generator:
    """A PCG64 generator keyed by the given (str | int) parts."""
    entropy = [_fold(p) for p in parts]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
