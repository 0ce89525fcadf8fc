"""
Deterministic Hashing and Random Streams

Process-independent hashing and named numpy sub-streams derived from one run seed.
"""
from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

MASK64 = (1 << 64) - 1
TWO_64 = float(1 << 64)

HashPart = Union[int, str, bytes, tuple]

# Named sub-streams. Consumers of one stream never perturb another.
STREAMS = ("workload", "placement", "chaos", "store", "cluster", "jitter")


def _mix64(z: int) -> int:
    """splitmix64 finalizer."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _part_value(part: HashPart) -> int:
    if isinstance(part, int):
        return part & MASK64
    if isinstance(part, str):
        part = part.encode("utf-8")
    if isinstance(part, bytes):
        return int.from_bytes(hashlib.blake2b(part, digest_size=8).digest(), "little")
    if isinstance(part, tuple):
        return stable_hash(*part)
    raise TypeError(f"Unhashable part type: {type(part).__name__}")


def stable_hash(*parts: HashPart) -> int:
    """
    Hash ints, strings and tuples to a 64-bit integer.

    Unlike the builtin ``hash`` the result does not depend on the interpreter's
    string hash salt, so routing and selectivity decisions replay identically.
    """
    h = 0xCBF29CE484222325
    for part in parts:
        h = _mix64(h ^ _part_value(part))
    return h


def unit_hash(*parts: HashPart) -> float:
    """stable_hash mapped onto [0, 1)."""
    return stable_hash(*parts) / TWO_64


class RngStreams:
    """
    Named numpy Generators derived from a single seed.

    Each stream is seeded from (seed, hash(name), *extra), so the order in
    which streams are first requested has no effect on their contents.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = self.derive(name)
        return self._streams[name]

    def derive(self, name: str, *extra: int) -> np.random.Generator:
        """Fresh generator for (name, *extra); never cached."""
        entropy = [self.seed & MASK64, stable_hash(name) & 0xFFFFFFFF]
        entropy.extend(int(e) & MASK64 for e in extra)
        return np.random.default_rng(entropy)
