"""Deterministic, cross-platform random number generation.

The generator is a counter-based SplitMix64: output k is ``mix64(seed +
(k+1) * GOLDEN)`` with all arithmetic modulo 2**64, so any block of outputs
can be produced in one vectorized call without sequential state updates.
Gaussian variates use the basic Box-Muller transform on consecutive pairs
of uniforms. Identical seeds give bit-identical streams on any platform.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _mix64(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> _U64(30))) * _MIX1
    x = (x ^ (x >> _U64(27))) * _MIX2
    return x ^ (x >> _U64(31))


def derive_seed(seed: int, tag: int) -> int:
    """Deterministically derive an independent substream seed."""
    base = np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    tagged = np.array([(tag & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
    return int(_mix64(base + (tagged + _U64(1)) * _GOLDEN)[0])


class Rng:
    """Seeded stream of uniforms and standard normals.

    The counter advances by the number of raw 64-bit words consumed, so the
    stream is identical whether values are drawn one at a time or in bulk.
    """

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def _raw(self, n: int) -> np.ndarray:
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64(self.seed + ks * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), 53-bit resolution."""
        return (self._raw(n) >> _U64(11)).astype(np.float64) * 2.0**-53

    def normal(self, shape) -> np.ndarray:
        """Standard normals via Box-Muller on pairs of uniforms.

        For n outputs, 2*ceil(n/2) raw words are consumed; u1 is nudged into
        (0, 1] so log(u1) is finite.
        """
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        raw = self._raw(2 * pairs)
        u1 = ((raw[0::2] >> _U64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[1::2] >> _U64(11)).astype(np.float64) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n].reshape(shape)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound) via floor(uniform * bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return np.minimum((self.uniform(n) * bound).astype(np.int64), bound - 1)

    def spawn(self, tag: int) -> "Rng":
        """Independent substream keyed by (seed, tag)."""
        return Rng(derive_seed(int(self.seed), tag))
