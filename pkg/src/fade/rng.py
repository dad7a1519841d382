"""Deterministic SplitMix64 generator.

The state advances by ``GAMMA`` per draw and each state is passed through the
finalizer below. Constants are the published SplitMix64 ones::

    GAMMA = 0x9E3779B97F4A7C15
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Doubles are formed from the top 53 bits: ``(z >> 11) * 2**-53``.
Normals use Box-Muller on consecutive pairs of doubles.
Because draw ``k`` depends only on ``seed + k * GAMMA`` the whole stream is
generated vectorised with wrapping uint64 arithmetic.
"""
from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int = 42):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + steps * GAMMA)

    def random(self, shape=()) -> np.ndarray:
        """Uniform doubles in [0, 1)."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def uniform(self, low, high, shape=(), dtype=np.float64) -> np.ndarray:
        return (low + (high - low) * self.random(shape)).astype(dtype)

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.random((2, m))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        theta = 2.0 * np.pi * u[1]
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape).astype(dtype)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high)."""
        return (low + np.floor(self.random(shape) * (high - low))).astype(np.int64)

    def spawn(self, stream: int) -> "SplitMix64":
        """Independent child generator, keyed by ``stream``."""
        child_seed = int(_mix(np.array([self.seed ^ ((stream * 0x2545F4914F6CDD1D) & _MASK64)], dtype=np.uint64))[0])
        return SplitMix64(child_seed)
