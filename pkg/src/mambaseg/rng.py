"""Deterministic pseudo-random streams.

xoshiro256** with splitmix64 seeding, implemented on Python integers so the
bit stream is identical on every platform. Gaussians come from Box-Muller.
Each consumer owns a named stream ("init", "augment", "data", ...) derived
from the user seed, so adding draws in one subsystem never perturbs another.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def _stream_tag(name: str) -> int:
    # FNV-1a over the UTF-8 bytes; stable across runs and platforms.
    h = 0xCBF29CE484222325
    for b in name.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


class Xoshiro256:
    """xoshiro256** stream seeded from (seed, stream name)."""

    def __init__(self, seed: int, stream: str = ""):
        sm = (seed & _MASK64) ^ _stream_tag(stream)
        s = []
        for _ in range(4):
            sm, word = _splitmix64(sm)
            s.append(word)
        # All-zero state is invalid for xoshiro; splitmix cannot produce it
        # from any input, but guard anyway.
        if not any(s):
            s[0] = 1
        self._s = s
        self._spare_gauss: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform draw in (0, 1]."""
        return ((self.next_u64() >> 11) + 1) * (2.0 ** -53)

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (exact, unbiased)."""
        if n <= 0:
            raise ValueError("randint upper bound must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def gauss(self) -> float:
        """Standard normal via Box-Muller, one spare cached per pair."""
        if self._spare_gauss is not None:
            z = self._spare_gauss
            self._spare_gauss = None
            return z
        u1 = self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_gauss = r * math.sin(theta)
        return r * math.cos(theta)

    def fill_uniform(self, out, lo: float = 0.0, hi: float = 1.0) -> None:
        flat = out.reshape(-1)
        for i in range(flat.shape[0]):
            flat[i] = lo + (hi - lo) * self.uniform()

    def fill_gauss(self, out) -> None:
        flat = out.reshape(-1)
        for i in range(flat.shape[0]):
            flat[i] = self.gauss()


def derive_seed(seed: int, *parts) -> int:
    """Stable 64-bit sub-seed from a base seed and identifying parts."""
    sm = seed & _MASK64
    for part in parts:
        tag = _stream_tag(str(part))
        sm, word = _splitmix64(sm ^ tag)
        sm ^= word
    _, out = _splitmix64(sm)
    return out
