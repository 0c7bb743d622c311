"""Deterministic random substreams.

Every stochastic component draws from its own generator keyed by a root seed
plus a structural path (e.g. epoch, step, batch element).  Streams with
different paths are statistically independent, and the same (seed, path)
always reproduces the same draws, so results do not depend on scheduling or
on how many other components consumed randomness.
"""

from __future__ import annotations

import zlib

import numpy as np


def _path_word(item) -> int:
    if isinstance(item, str):
        return zlib.crc32(item.encode("utf-8"))
    if isinstance(item, (int, np.integer)):
        if item < 0:
            raise ValueError(f"substream path ints must be non-negative, got {item}")
        return int(item)
    raise TypeError(f"substream path items must be int or str, got {type(item)!r}")


def substream(seed: int, *path) -> np.random.Generator:
    """Independent generator for (seed, *path); path items are ints or
    short string tags."""
    key = tuple(_path_word(p) for p in path)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
