"""Deterministic seeded random generator.

The generator is xoshiro256** seeded through splitmix64, so a given seed
produces the same stream on every platform and interpreter. Gaussian draws
use Box-Muller with a cached spare. Integer draws in a range use plain
modulo reduction; the tiny bias is irrelevant here and the mapping is
reproducible, which is what matters.
"""

import math

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK64


class SeededRng:
    """xoshiro256** stream with convenience samplers."""

    def __init__(self, seed):
        state = int(seed) & _MASK64
        s = []
        for _ in range(4):
            state, v = _splitmix64(state)
            s.append(v)
        if not any(s):  # all-zero state is the one forbidden xoshiro state
            s[0] = 1
        self._s = s
        self._spare_normal = None

    def next_u64(self):
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

    def random(self):
        """Uniform in [0, 1) with 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def random_open(self):
        """Uniform in (0, 1], safe as a log argument."""
        return ((self.next_u64() >> 11) + 1) * (2.0 ** -53)

    def uniform(self, lo, hi, shape=None, dtype=np.float32):
        if shape is None:
            return lo + (hi - lo) * self.random()
        size = int(np.prod(shape)) if shape else 1
        out = np.empty(size, dtype=np.float64)
        for i in range(size):
            out[i] = lo + (hi - lo) * self.random()
        return out.reshape(shape).astype(dtype)

    def _normal_scalar(self):
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = self.random_open()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def normal(self, shape=None, dtype=np.float32):
        if shape is None:
            return self._normal_scalar()
        size = int(np.prod(shape)) if shape else 1
        out = np.empty(size, dtype=np.float64)
        for i in range(size):
            out[i] = self._normal_scalar()
        return out.reshape(shape).astype(dtype)

    def randbelow(self, n):
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        return self.next_u64() % n

    def shuffle(self, seq):
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def choice(self, seq):
        return seq[self.randbelow(len(seq))]

    def spawn(self):
        """Independent child stream derived from this one."""
        return SeededRng(self.next_u64())
