"""Portable seeded random streams.

Everything random in the package (synthetic data, weight init, batch
shuffles, pair subsampling) draws from :class:`XorShift64Star` so that the
byte stream is fully specified and reproducible in any language:

* state update: ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27`` (mod 2**64)
* output: ``x * 0x2545F4914F6CDD1D`` (mod 2**64)
* seeding: the user seed is passed through one round of splitmix64
* uniforms: top 53 bits of the output, scaled by 2**-53, in [0, 1)
* normals: basic Box-Muller; both values of each pair are used, cosine first
* bounded integers: rejection sampling on the raw 64-bit output
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
XORSHIFT_MULT = 0x2545F4914F6CDD1D
SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    z = (x + SPLITMIX_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def derive_seed(seed: int, name: str) -> int:
    """Mix a user seed with a stream name into an independent 64-bit seed."""
    return splitmix64((int(seed) & MASK64) ^ fnv1a64(name))


class XorShift64Star:
    """xorshift64* generator with Box-Muller normals."""

    def __init__(self, seed: int):
        state = splitmix64(int(seed) & MASK64)
        # the all-zero state is a fixed point of xorshift
        self._state = state or SPLITMIX_GAMMA
        self._spare: float | None = None

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self._state = x
        return (x * XORSHIFT_MULT) & MASK64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform_range(self, low: float, high: float) -> float:
        return low + (high - low) * self.uniform()

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log finite
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normal_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.array([self.normal() for _ in range(n)], dtype=np.float64).reshape(shape)

    def uniform_array(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape))
        u = np.array([self.uniform() for _ in range(n)], dtype=np.float64)
        return (low + (high - low) * u).reshape(shape)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx, dtype=np.int64)

    def sample_indices(self, n: int, k: int) -> np.ndarray:
        """Uniform k-subset of ``range(n)`` via a partial Fisher-Yates shuffle.

        Returned indices are sorted ascending.
        """
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} of {n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return np.sort(np.array(idx[:k], dtype=np.int64))
