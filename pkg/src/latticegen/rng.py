"""Portable deterministic random number generation.

Every random decision in this package flows through :class:`Rng`, a small
generator built on the splitmix64 mixing function.  The stream produced by a
given 64-bit seed is identical on every platform and Python version, which is
what lets golden transcripts, experiment CSVs, and the permutation seeded with
``prime * t`` reproduce bit-exactly.

Stream derivation uses SHA-256 over a canonical byte encoding of the seed
parts, so independent substreams ("true", "noise", per-cell seeds) never
overlap by construction.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state once. Returns (new_state, output)."""
    state = (state + _GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(*parts: int | str) -> int:
    """Derive a 64-bit seed from a sequence of labels and integers.

    SHA-256 over a length-prefixed encoding; the first 8 digest bytes become
    the seed.  Used for substreams and per-cell experiment seeds.
    """
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, str):
            raw = b"s" + part.encode("utf-8")
        else:
            raw = b"i" + int(part).to_bytes(16, "big", signed=True)
        h.update(len(raw).to_bytes(4, "big"))
        h.update(raw)
    return int.from_bytes(h.digest()[:8], "big")


class Rng:
    """Seeded splitmix64 generator with the handful of draws we need."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def clone(self) -> "Rng":
        other = Rng(0)
        other._state = self._state
        return other

    def next_u64(self) -> int:
        self._state, out = splitmix64(self._state)
        return out

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n). Rejection-sampled, so unbiased."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        # Largest multiple of n that fits in 64 bits.
        limit = ((1 << 64) // n) * n
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items: Sequence):
        if not items:
            raise ValueError("choice on empty sequence")
        return items[self.randbelow(len(items))]

    def sample_index(self, weights: Sequence[float]) -> int:
        """Sample an index proportional to non-negative weights."""
        total = 0.0
        for w in weights:
            if w < 0:
                raise ValueError("negative weight")
            total += w
        if total <= 0.0:
            raise ValueError("weights sum to zero")
        u = self.random() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        return len(weights) - 1  # guard against float round-off

    def spawn(self, *labels: int | str) -> "Rng":
        """Independent substream keyed by this generator's seed state and labels."""
        return Rng(derive_seed(self._state, *labels))
