"""Seedable, portable random number generation for reproducible experiments.

splitmix64 with rejection-sampled bounded draws: bit-exact on every platform
and trivially re-implementable, so a scenario file plus a seed pins the whole
traffic realization. The algorithm id is recorded in output metadata.
"""

from __future__ import annotations

PRNG_ID = "splitmix64"

_MASK64 = (1 << 64) - 1


class Splitmix64:
    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform_int(self, lo: int, hi: int) -> int:
        """Unbiased uniform integer in [lo, hi] (inclusive) via rejection."""
        if lo > hi:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        # Largest multiple of span below 2^64; draws at or above it are biased.
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            r = self.next_u64()
            if r < limit:
                return lo + r % span
