"""Seeded, reproducible random numbers.

A single xoshiro256** generator (Blackman & Vigna) backs every random
draw in the package. The state transition uses only 64-bit integer
shift/rotate/xor arithmetic carried out with Python ints, so the raw
stream is bit-identical for a given seed regardless of platform.
Gaussian draws use the Box-Muller transform on 53-bit uniforms.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    # SplitMix64 finalizer; used for state seeding and seed derivation.
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent child seed from ``seed`` and integer keys.

    Used to hand one stream per trajectory / per node / per stage without
    sharing generator state across workers.
    """
    x = seed & _MASK64
    for k in keys:
        x = _mix64((x + _GOLDEN) ^ _mix64(k & _MASK64))
    return x


class Rng:
    """xoshiro256** stream seeded via SplitMix64 expansion of a 64-bit seed."""

    __slots__ = ("seed", "_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        x = self.seed
        st = []
        for _ in range(4):
            x = (x + _GOLDEN) & _MASK64
            st.append(_mix64(x))
        if not any(st):  # all-zero state is the one forbidden configuration
            st[0] = 1
        self._s0, self._s1, self._s2, self._s3 = st

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        r = (s1 * 5) & _MASK64
        r = (((r << 7) | (r >> 57)) & _MASK64) * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return r

    def uniform(self) -> float:
        """One draw from [0, 1) with 53 random bits."""
        return (self.next_uint64() >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        out = np.empty(n)
        for i in range(n):
            out[i] = (self.next_uint64() >> 11) * 2.0**-53
        return out

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return min(int(self.uniform() * n), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        out = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def gaussians(self, n: int) -> np.ndarray:
        """n standard normal draws (Box-Muller, pairs)."""
        out = np.empty(n)
        i = 0
        while i < n:
            # u1 in (0, 1] keeps the log finite
            u1 = ((self.next_uint64() >> 11) + 1) * 2.0**-53
            u2 = (self.next_uint64() >> 11) * 2.0**-53
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            i += 1
            if i < n:
                out[i] = r * math.sin(2.0 * math.pi * u2)
                i += 1
        return out

    def spawn(self, *keys: int) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))


def gaussian_vector(rng: Rng, dim: int, sigma: float) -> np.ndarray:
    """dim i.i.d. draws from N(0, sigma^2); sigma = 0 gives the zero vector.

    Always advances the state by the same amount, so downstream draws do
    not depend on sigma.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return sigma * rng.gaussians(dim)
