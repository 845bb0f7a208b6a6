"""Deterministic counter-based random streams.

Every random draw in this package flows from a (seed, stream key, counter)
triple pushed through the splitmix64 finalizer, so the i-th value of any
stream is a pure function of those three integers: no hidden generator
state, identical output on every platform, and cheap forking of
independent child streams for per-image / per-step randomness.
"""
from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _finalize(z):
    # splitmix64 output mixing (Steele et al.); wraps mod 2**64
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


class RngStream:
    """A forkable random stream addressed by (seed, stream tags, counter)."""

    def __init__(self, seed: int, stream: int = 0):
        with np.errstate(over="ignore"):
            key = _finalize(_U64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + _U64(1))
            self._key = _finalize(key ^ (_U64(stream & 0xFFFFFFFFFFFFFFFF) * _MIX2 + _GOLDEN))
        self.counter = 0

    @classmethod
    def _from_key(cls, key: np.uint64) -> "RngStream":
        out = cls.__new__(cls)
        out._key = _U64(key)
        out.counter = 0
        return out

    def child(self, *tags: int) -> "RngStream":
        """Fork an independent stream; same tags always give the same child."""
        key = self._key
        with np.errstate(over="ignore"):
            for t in tags:
                key = _finalize(key * _GOLDEN + _U64(t & 0xFFFFFFFFFFFFFFFF) + _U64(1))
        return RngStream._from_key(key)

    def u64(self, n: int | None = None) -> np.ndarray:
        """Next n raw 64-bit words (scalar when n is None)."""
        m = 1 if n is None else int(n)
        idx = self.counter + np.arange(1, m + 1, dtype=np.uint64)
        self.counter += m
        with np.errstate(over="ignore"):
            out = _finalize(self._key + idx * _GOLDEN)
        return out[0] if n is None else out

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = 1 if shape is None else int(np.prod(shape))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u = low + (high - low) * u
        return u[0] if shape is None else u.reshape(shape)

    def normal(self, shape=None, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        # Box-Muller; two words per value, cosine branch only
        n = 1 if shape is None else int(np.prod(shape))
        u1 = 1.0 - self.uniform(n)  # (0, 1]: keeps log finite
        u2 = self.uniform(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        z = mean + std * z
        return z[0] if shape is None else z.reshape(shape)

    def gamma(self, alpha: float, shape=None) -> np.ndarray:
        """Gamma(alpha, 1) via the Marsaglia-Tsang squeeze, any alpha > 0."""
        if not alpha > 0:
            raise ValueError(f"gamma needs alpha > 0, got {alpha}")
        n = 1 if shape is None else int(np.prod(shape))
        boost = None
        a = float(alpha)
        if a < 1.0:
            boost = self.uniform(n) ** (1.0 / a)
            a = a + 1.0
        d = a - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        out = np.empty(n, dtype=np.float64)
        todo = np.arange(n)
        while todo.size:
            x = self.normal(todo.size)
            v = (1.0 + c * x) ** 3
            u = self.uniform(todo.size)
            ok = v > 0
            lhs = np.where(ok, np.log(np.where(ok, v, 1.0)), 0.0)
            accept = ok & (np.log(1.0 - u) < 0.5 * x * x + d - d * v + d * lhs)
            # 1-u in (0,1]; log finite. Rejected slots redraw next round.
            out[todo[accept]] = d * v[accept]
            todo = todo[~accept]
        if boost is not None:
            out = out * boost
        return out[0] if shape is None else out.reshape(shape)

    def beta(self, a: float, b: float, shape=None) -> np.ndarray:
        n = 1 if shape is None else int(np.prod(shape))
        g1 = self.gamma(a, n)
        g2 = self.gamma(b, n)
        out = g1 / (g1 + g2)
        return out[0] if shape is None else out.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (argsort of random keys)."""
        keys = self.u64(n)
        return np.argsort(keys, kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices drawn uniformly from range(n)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct indices from {n}")
        return self.permutation(n)[:k]
