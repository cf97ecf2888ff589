"""Named random substreams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator keyed by ``seed`` and a path of names/ints.

    The same (seed, names) pair always yields the same stream, independent of
    how many other streams were drawn before it.
    """
    key = [int(seed) & 0xFFFFFFFF]
    for name in names:
        if isinstance(name, (int, np.integer)):
            key.append(int(name) & 0xFFFFFFFF)
        else:
            key.append(zlib.crc32(str(name).encode()))
    return np.random.default_rng(np.random.SeedSequence(key))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Child generators seeded from ``rng``; order-independent once drawn."""
    seeds = rng.integers(0, 2**63 - 1, size=n)
    return [np.random.default_rng(int(s)) for s in seeds]


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a seed, None, or a legacy RandomState."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, np.random.RandomState):
        return np.random.default_rng(rng.randint(2**31))
    return np.random.default_rng(rng)
