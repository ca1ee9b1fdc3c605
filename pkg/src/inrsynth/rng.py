"""Named, reproducible random streams derived from one 64-bit seed.

Every consumer asks for ``stream(seed, "stage", case_index, ...)``; the
resulting generator depends only on the seed and the names, so parallel and
serial runs draw identical numbers.
"""
import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *names):
    entropy = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=tuple(_key(n) for n in names)))
