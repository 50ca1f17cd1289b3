"""Counter-based, splittable random streams.

Algorithm (fixed; part of the on-disk reproducibility contract):

* ``mix64`` is the SplitMix64 finalizer::

      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
      z = (z ^ (z >> 27)) * 0x94D049BB133111EB
      z =  z ^ (z >> 31)                       (all arithmetic mod 2**64)

* The stream key is derived from the seed and the fork path::

      key = mix64(seed mod 2**64)
      for label in path:
          key = mix64(key ^ fnv1a64(utf8(label)))

* Draw number ``i`` (0-based) is ``mix64(key + (i + 1) * 0x9E3779B97F4A7C15)``,
  i.e. SplitMix64 started at ``key``.

Because a child key depends only on ``(seed, path)``, forking never looks at
how many values the parent has already produced. Uniform floats take the top
53 bits; normals use Box-Muller on pairs of uniforms; gamma variates use
Marsaglia-Tsang rejection. Everything is integer arithmetic up to the final
libm calls, so the bit stream is identical on every platform.
"""

from __future__ import annotations

import math
from typing import Sequence, TypeVar

import numpy as np

from .errors import UsageError

T = TypeVar("T")

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TWO_NEG_53 = 2.0**-53


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class RandomStream:
    """A deterministic stream of 64-bit draws keyed by ``(seed, path)``.

    Drawing advances an internal counter, so a single stream must not be
    shared between threads; fork one child per worker instead.
    """

    __slots__ = ("seed", "path", "_key", "_counter")

    def __init__(self, seed: int, path: Sequence[str] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        key = mix64(self.seed & _MASK)
        for label in self.path:
            key = mix64(key ^ fnv1a64(label.encode("utf-8")))
        self._key = key
        self._counter = 0

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, path={self.path!r}, drawn={self._counter})"

    def fork(self, label: str) -> RandomStream:
        """Child stream keyed by ``(seed, path + (label,))``."""
        if not isinstance(label, str) or not label:
            raise UsageError("fork label must be a non-empty string")
        return RandomStream(self.seed, self.path + (label,))

    @property
    def drawn(self) -> int:
        return self._counter

    # -- raw bits ---------------------------------------------------------

    def bits(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit draws as a uint64 array."""
        start = self._counter + 1
        self._counter += n
        idx = np.arange(n, dtype=np.uint64) + np.uint64(start & _MASK)
        return _mix64_array(np.uint64(self._key) + idx * np.uint64(_GOLDEN))

    def next_bits(self) -> int:
        self._counter += 1
        return mix64(self._key + self._counter * _GOLDEN)

    # -- continuous draws ---------------------------------------------------

    def uniform(self, size: int | tuple[int, ...] | None = None):
        """Uniform draw(s) on [0, 1) with 53-bit resolution."""
        if size is None:
            return (self.next_bits() >> 11) * _TWO_NEG_53
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.bits(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        return u.reshape(shape)

    def uniform_range(self, low: float, high: float) -> float:
        return low + (high - low) * self.uniform()

    def normal(self, size: int | tuple[int, ...] | None = None):
        """Standard normal draw(s); each value consumes two uniforms."""
        if size is None:
            u1 = 1.0 - self.uniform()
            u2 = self.uniform()
            return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        shape = (size,) if isinstance(size, int) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log(1.0 - u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        return z.reshape(shape)

    def gamma(self, shape: float, size: int) -> np.ndarray:
        """``size`` Gamma(shape, 1) variates by Marsaglia-Tsang rejection."""
        if not shape > 0:
            raise UsageError(f"gamma shape must be positive, got {shape}")
        boost = shape < 1.0
        a = shape + 1.0 if boost else shape
        d = a - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        out = np.empty(size)
        filled = 0
        while filled < size:
            m = size - filled
            z = self.normal(m)
            u = self.uniform(m)
            v = (1.0 + c * z) ** 3
            with np.errstate(invalid="ignore", divide="ignore"):
                ok = (v > 0) & (np.log(u) < 0.5 * z * z + d - d * v + d * np.log(v))
            acc = d * v[ok]
            out[filled:filled + acc.size] = acc
            filled += acc.size
        if boost:
            out *= (1.0 - self.uniform(size)) ** (1.0 / shape)
        return out

    # -- discrete draws -----------------------------------------------------

    def integer(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high]."""
        if high < low:
            raise UsageError(f"empty integer range [{low}, {high}]")
        span = high - low + 1
        return low + ((self.next_bits() * span) >> 64)

    def choice(self, items: Sequence[T]) -> T:
        if not items:
            raise UsageError("cannot choose from an empty sequence")
        return items[self.integer(0, len(items) - 1)]
