"""Pinned deterministic RNG.

Every randomized operation in the toolkit draws from this generator so that
outputs are bit-identical across runs, platforms, and reimplementations in
other languages. The algorithm is fixed:

* Stream: SplitMix64. State advances by the 64-bit golden-ratio constant
  0x9E3779B97F4A7C15; each output is the splitmix64 finalizer of the new
  state. All arithmetic is modulo 2**64.
* Bounded integers are rejection-free: ``below(n) = (next_u64() * n) >> 64``
  (the high word of the 128-bit product).
* Shuffles are Fisher-Yates from the back: for i = n-1 .. 1 swap position i
  with position ``below(i + 1)``.
* Per-item seeds: ``derive_seed(global_seed, item_id)`` is the first output
  of a SplitMix64 stream seeded with ``global_seed XOR fnv1a64(item_id)``,
  where fnv1a64 is 64-bit FNV-1a over the UTF-8 bytes of the id.
* Sub-streams: ``stream_at(seed, i)`` is the i-th output of the SplitMix64
  stream seeded with ``seed``, used where one seed must fan out into several
  independent draws (e.g. one seed per perturbation strategy and attempt).
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    """splitmix64 finalizer: bijective 64-bit mix."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(global_seed: int, item_id: str) -> int:
    """Per-item seed from a global seed and a stable string id."""
    return SplitMix64(global_seed ^ fnv1a64(item_id)).next_u64()


def stream_at(seed: int, index: int) -> int:
    """The ``index``-th (0-based) output of ``SplitMix64(seed)`` in O(1)."""
    if index < 0:
        raise ValueError("stream index must be non-negative")
    return mix64((seed + (index + 1) * _GOLDEN) & _MASK64)


class SplitMix64:
    """Counter-based 64-bit generator; see module docstring for the contract."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def below(self, n: int) -> int:
        """Uniform-ish integer in [0, n) without rejection."""
        if n <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64() * n) >> 64

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle drawing via ``below``."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
