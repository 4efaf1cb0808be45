"""Portable counter-mode SplitMix64 streams.

Every random decision in the pipeline (stratum draws, shuffles, bootstraps,
feature subsets, weight init) comes from here so results do not depend on
numpy's Generator stream policy. Output ``i`` of a stream with key ``k`` is
``mix64(k + (i + 1) * GAMMA)``, which makes draws vectorizable and lets
callers address outputs by explicit counter (e.g. a record ordinal).
"""

from __future__ import annotations

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def fnv1a64(data: bytes | str) -> int:
    """64-bit FNV-1a; also the symbol hash used by the record parser."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK64
    return h


def derive_key(seed: int, *parts: int | str) -> int:
    key = mix64(int(seed) & MASK64)
    for part in parts:
        tag = fnv1a64(part) if isinstance(part, str) else mix64(int(part) + 1)
        key = mix64(key ^ tag)
    return key


class SplitMix64:
    """Keyed stream with an internal counter.

    ``SplitMix64.derive(seed, "stratum", "smurf")`` gives an independent
    substream per label, so per-label draws do not depend on each other.
    """

    def __init__(self, key: int, counter: int = 0):
        self.key = int(key) & MASK64
        self.counter = int(counter)

    @classmethod
    def derive(cls, seed: int, *parts: int | str) -> "SplitMix64":
        return cls(derive_key(seed, *parts))

    def spawn(self, *parts: int | str) -> "SplitMix64":
        return SplitMix64.derive(self.key, *parts)

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.key + self.counter * GAMMA)

    def at(self, counters: np.ndarray) -> np.ndarray:
        """Outputs addressed by explicit 0-based counters; does not advance."""
        c = np.asarray(counters, dtype=np.uint64) + np.uint64(1)
        return mix64_array(np.uint64(self.key) + c * np.uint64(GAMMA))

    def u64(self, n: int) -> np.ndarray:
        out = self.at(np.arange(self.counter, self.counter + n, dtype=np.uint64))
        self.counter += n
        return out

    def random(self, n: int | None = None):
        """Uniform doubles in [0, 1) with 53 random bits."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def below(self, bound: int, n: int | None = None):
        """Integers in [0, bound); bias is at most bound / 2**53."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        if n is None:
            return min(int(self.random() * bound), bound - 1)
        out = np.floor(self.random(n) * bound).astype(np.int64)
        return np.minimum(out, bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.u64(n), kind="stable")

    def choose(self, n: int, k: int) -> list[int]:
        """k distinct values from range(n), in draw order (partial Fisher-Yates)."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot choose {k} of {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
