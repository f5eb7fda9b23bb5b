"""Seeded, splittable random streams.

Every stream is a Philox generator keyed by the run seed plus a tuple of
integer labels, so per-antenna or per-trial streams never overlap and do not
depend on the order in which they are created.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    return int(key)


def stream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_label(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
