"""Deterministic, splittable random streams.

Every stochastic component draws from a stream derived from a master seed and a
path of labels, so concurrent tasks and reruns see identical randomness
regardless of scheduling order.
"""

import zlib

import numpy as np


def _encode(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported stream path component: {part!r}")


def stream(master_seed: int, *path) -> np.random.Generator:
    """Return a Generator fully determined by (master_seed, path)."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [_encode(p) for p in path]
    return np.random.default_rng(np.random.SeedSequence(entropy))
