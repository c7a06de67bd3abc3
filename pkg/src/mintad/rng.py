"""Splittable counter-based random streams.

Every stochastic primitive takes a :class:`Stream` explicitly. A stream is
identified by ``(seed, key)``; children are derived by appending to the key,
so the same path always yields the same numbers regardless of the order in
which sibling streams are consumed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream key parts must be nonnegative, got {part}")
    return int(part)


class Stream:
    """Philox-backed generator with a draw counter.

    ``draws`` counts sampling calls on this stream and on every stream split
    from it; evaluation code asserts it stays unchanged to prove no
    stochastic primitive ran.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = (), parent: "Stream | None" = None):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))
        self._parent = parent
        self.draws = 0

    def split(self, *parts: int | str) -> "Stream":
        return Stream(self.seed, self.key + tuple(_key_part(p) for p in parts), parent=self)

    def _count(self) -> None:
        s = self
        while s is not None:
            s.draws += 1
            s = s._parent

    def normal(self, size, dtype=np.float64) -> np.ndarray:
        self._count()
        return self._gen.standard_normal(size, dtype=np.dtype(dtype).type)

    def uniform(self, low: float, high: float, size, dtype=np.float64) -> np.ndarray:
        self._count()
        return self._gen.uniform(low, high, size).astype(dtype, copy=False)

    def random(self, size, dtype=np.float64) -> np.ndarray:
        self._count()
        return self._gen.random(size, dtype=np.dtype(dtype).type)

    def integers(self, low: int, high: int, size=None):
        self._count()
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        self._count()
        return self._gen.permutation(n)

    def describe(self) -> dict:
        return {"seed": self.seed, "key": list(self.key)}

    def __repr__(self) -> str:
        return f"Stream(seed={self.seed}, key={self.key})"
