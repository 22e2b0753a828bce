"""
xoshiro256++ seeded through splitmix64.

The synthetic dataset and the training crop sampler draw from this generator
so their output depends only on the seed, not on the numpy version. Gaussians
use Box-Muller; bounded integers use rejection sampling.
"""

import math
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InvalidValueError

MASK64 = (1 << 64) - 1
_JUMP = (0x180EC6D33CFD0ABA, 0xD5A61266F0C9392C, 0xA9582618E03FC9AA, 0x39ABDC4529B1661C)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256pp:
    """xoshiro256++ with a cached second Box-Muller variate."""

    def __init__(self, seed: int = 0):
        mixer = SplitMix64(seed)
        self.s: List[int] = [mixer.next() for _ in range(4)]
        self._spare: float = math.nan

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def integers(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise InvalidValueError(f"integers() needs n >= 1, got {n}")
        limit = ((1 << 64) // n) * n
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def normal(self) -> float:
        if not math.isnan(self._spare):
            value, self._spare = self._spare, math.nan
            return value
        u1 = 1.0 - self.random()
        u2 = self.random()
        radius = math.sqrt(-2.0 * math.log(u1))
        angle = 2.0 * math.pi * u2
        self._spare = radius * math.sin(angle)
        return radius * math.cos(angle)

    def normal_array(self, shape: Sequence[int]) -> np.ndarray:
        count = int(np.prod(shape)) if len(shape) else 1
        return np.array([self.normal() for _ in range(count)], dtype=np.float64).reshape(tuple(shape))

    def shuffle(self, items: list) -> None:
        """Fisher-Yates, in place."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integers(i + 1)
            items[i], items[j] = items[j], items[i]

    def jump(self) -> None:
        """Advance 2**128 steps; used to carve non-overlapping worker streams."""
        acc = [0, 0, 0, 0]
        for word in _JUMP:
            for bit in range(64):
                if word & (1 << bit):
                    acc = [a ^ s for a, s in zip(acc, self.s)]
                self.next_u64()
        self.s = acc
        self._spare = math.nan

    def spawn(self, count: int) -> List["Xoshiro256pp"]:
        """
        `count` non-overlapping streams, one jump apart.

        The parent jumps once more past the last stream, so its own later
        draws never overlap them either.
        """
        streams = []
        for _ in range(count):
            self.jump()
            streams.append(self.copy())
        self.jump()
        return streams

    def copy(self) -> "Xoshiro256pp":
        child = Xoshiro256pp.__new__(Xoshiro256pp)
        child.s = list(self.s)
        child._spare = self._spare
        return child

    def get_state(self) -> Tuple[int, int, int, int, float]:
        return (*self.s, self._spare)

    def set_state(self, state: Sequence) -> None:
        self.s = [int(v) & MASK64 for v in state[:4]]
        self._spare = float(state[4]) if len(state) > 4 else math.nan

    def state_string(self) -> str:
        words = ",".join(f"{w:016x}" for w in self.s)
        return f"{words};{self._spare!r}"

    @classmethod
    def from_state_string(cls, text: str) -> "Xoshiro256pp":
        words, spare = text.split(";")
        rng = cls.__new__(cls)
        rng.set_state([int(w, 16) for w in words.split(",")] + [float(spare)])
        return rng
