"""SplitMix64 streams, specified bit-exactly so phantoms reproduce anywhere.

state_i = seed + (i + 1) * 0x9E3779B97F4A7C15            (mod 2^64)
z = state_i
z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
z = (z ^ (z >> 27)) * 0x94D049BB133111EB
out_i = z ^ (z >> 31)

Uniforms use the top 53 bits: u = (out >> 11) * 2^-53, in [0, 1).
Bounded integers use the multiply-shift map ``(out * n) >> 64``.
Normals use Box-Muller on consecutive uniform pairs (u1, u2):
r = sqrt(-2 ln(1 - u1)), giving r cos(2 pi u2), r sin(2 pi u2) in that order.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def shuffle(self, items: list) -> list:
        """Fisher-Yates, last position first; returns a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randbelow(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def spawn(self) -> "SplitMix64":
        """Independent child stream seeded from this stream's next output."""
        return SplitMix64(self.next_u64())

    def u64_array(self, n: int) -> np.ndarray:
        """Next ``n`` outputs, vectorised; advances the stream by ``n``."""
        with np.errstate(over="ignore"):
            idx = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + idx * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK64
        return z

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normal_array(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform_array(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).ravel()
        return z[:n]
