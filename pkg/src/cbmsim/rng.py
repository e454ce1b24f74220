"""Counter-based uniform draws.

Every (seed, vertex, event) triple owns a SplitMix64 substream; the draw used
in round ``r`` is that substream's ``r``-th output, truncated to 53 bits. A
draw therefore depends only on its coordinates, never on how many other cells
or trials were simulated alongside it, so batched and single runs agree bit
for bit.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

ALGORITHM = "splitmix64-substream-53bit-v1"

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
DRAW_BITS = 53
ONE = 1 << DRAW_BITS


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def substream_key(seed: int, vertex: int, event: int) -> int:
    k = mix64(seed + GAMMA)
    k = mix64(k + vertex + GAMMA)
    return mix64(k + event + GAMMA)


def draw(seed: int, round_: int, vertex: int, event: int) -> int:
    """Integer ``u`` in ``[0, 2**53)``; the uniform variate is ``u / 2**53``."""
    key = substream_key(seed, vertex, event)
    return mix64(key + round_ * GAMMA) >> (64 - DRAW_BITS)


def fire_threshold(p: Fraction) -> int:
    """Smallest ``K`` with ``u < K  <=>  u / 2**53 < p`` for integer ``u``."""
    return -((-p.numerator * ONE) // p.denominator)


# -- vectorised versions -----------------------------------------------------

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_UM1 = np.uint64(_M1)
_UM2 = np.uint64(_M2)
_SHIFT = np.uint64(64 - DRAW_BITS)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> _U30)
    z *= _UM1
    z ^= z >> _U27
    z *= _UM2
    z ^= z >> _U31
    return z


def substream_keys(seeds, vertices, events) -> np.ndarray:
    """Keys of shape (len(seeds), len(vertices)) for the given slot layout."""
    seeds = np.asarray([s & MASK64 for s in seeds], dtype=np.uint64)
    vertices = np.asarray(vertices, dtype=np.uint64)
    events = np.asarray(events, dtype=np.uint64)
    g = np.uint64(GAMMA)
    with np.errstate(over="ignore"):
        k = mix64_array(seeds + g)[:, None]
        k = mix64_array(k + vertices[None, :] + g)
        return mix64_array(k + events[None, :] + g)


def draws_array(keys: np.ndarray, round_: int) -> np.ndarray:
    step = np.uint64((round_ * GAMMA) & MASK64)
    with np.errstate(over="ignore"):
        return (mix64_array(keys + step) >> _SHIFT).astype(np.int64)


class CounterRng:
    """Seed holder naming the draw algorithm; see module docstring."""

    algorithm = ALGORITHM

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64

    def draw(self, round_: int, vertex: int, event: int) -> int:
        return draw(self.seed, round_, vertex, event)

    def __repr__(self):
        return f"CounterRng(seed={self.seed})"
