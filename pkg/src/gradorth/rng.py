"""Deterministic pseudo-random numbers for reproducible experiments.

Every stochastic choice in this package (dataset generation, weight
initialization, minibatch shuffling, per-class sampling) goes through
``SplitMix64`` so that runs are bit-identical across platforms and the
generator can be reimplemented in another language from this docstring
alone. The algorithm is pinned as follows, with all arithmetic modulo
2**64:

* state update:   state = state + 0x9E3779B97F4A7C15
* output mix:     z = state
                  z = (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9
                  z = (z XOR (z >> 27)) * 0x94D049BB133111EB
                  z = z XOR (z >> 31)
* floats:         next_float() = (next_u64() >> 11) * 2**-53, in [0, 1)
* normals:        Box-Muller on u1 = 1 - next_float() (so u1 > 0) and
                  u2 = next_float(); the cosine branch is returned first
                  and the sine branch cached for the next call
* bounded ints:   rejection sampling on next_u64, so no modulo bias
* shuffling:      Fisher-Yates from the last index down, j = next_below(i + 1)
"""

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    """Counter-based 64-bit generator with a pinned output sequence."""

    def __init__(self, seed):
        self._state = int(seed) & _MASK64
        self._spare_normal = None

    def next_u64(self):
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_float(self):
        """Uniform double in [0, 1) with 53 random mantissa bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def next_normal(self):
        """Standard normal via Box-Muller; draws two uniforms per pair."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = 1.0 - self.next_float()  # in (0, 1], keeps log() finite
        u2 = self.next_float()
        radius = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = radius * math.sin(theta)
        return radius * math.cos(theta)

    def normals(self, count):
        return [self.next_normal() for _ in range(count)]

    def next_below(self, n):
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("bound must be positive, got %r" % (n,))
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            value = self.next_u64()
            if value < limit:
                return value % n

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a mutable sequence."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_without_replacement(self, pool, k):
        """First k entries of a partial Fisher-Yates pass over a copy of pool."""
        items = list(pool)
        if k > len(items):
            raise ValueError("cannot sample %d items from a pool of %d" % (k, len(items)))
        for i in range(k):
            j = i + self.next_below(len(items) - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]
