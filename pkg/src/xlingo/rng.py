"""Deterministic RNG: xoshiro256** seeded via splitmix64.

One algorithm on every platform so that seeds reproduce bit-identical
streams (dropout masks, weight inits, data sampling). Bulk draws go
through the kernel backend; scalar draws use the same stream, one u64
per value, so interleaving bulk and scalar calls is well defined.
"""

from __future__ import annotations

import numpy as np

from . import kernels

_MASK = 0xFFFFFFFFFFFFFFFF


def _splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """Seedable generator; identical seed means identical stream."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        sm = self.seed
        state = []
        for _ in range(4):
            sm, out = _splitmix64(sm)
            state.append(out)
        self._s = state

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self, size: int | tuple[int, ...] | None = None):
        """Uniform float64 in [0,1); scalar when size is None."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n)
        state = np.array(self._s, dtype=np.uint64)
        kernels.xoshiro_fill(state, out)
        self._s = [int(w) for w in state]
        return out.reshape(shape)

    def uniform(self, lo: float, hi: float, size=None):
        return lo + (hi - lo) * self.random(size)

    def integers(self, n: int) -> int:
        """Uniform int in [0, n). Modulo reduction: deterministic, and the
        bias is negligible for the n used here (n << 2^64)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def choice(self, seq):
        return seq[self.integers(len(seq))]

    def pick_weighted(self, cumweights: np.ndarray) -> int:
        """Index drawn proportionally to weights given their cumulative sum."""
        r = self.random() * float(cumweights[-1])
        return int(np.searchsorted(cumweights, r, side="right"))

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.integers(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def spawn(self, tag) -> "Rng":
        """Independent child stream derived from the seed and a tag.

        Derivation uses only the original seed, not the draw position, so
        sub-streams are stable under reordering of parent draws.
        """
        mixed = self.seed ^ _fnv1a64(str(tag).encode("utf-8"))
        _, out = _splitmix64(mixed)
        return Rng(out)
