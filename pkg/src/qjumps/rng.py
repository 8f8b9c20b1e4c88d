"""Counter-based random streams.

A stream is a 64-bit key plus a counter; the n-th uniform is a pure function
of ``(key, n)``.  Trajectory ``i`` of an ensemble uses the key derived from
``(master_seed, i)``, so results do not depend on execution order and batches
of draws for many trajectories can be evaluated in one vectorized call.

The mixing function is the SplitMix64 finalizer, applied twice.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_keys(master_seed: int, indices) -> np.ndarray:
    """Stream keys for trajectory ``indices`` under ``master_seed``."""
    idx = np.atleast_1d(np.asarray(indices, dtype=np.uint64))
    with np.errstate(over="ignore"):
        base = _mix(np.array([int(master_seed) & _MASK64], dtype=np.uint64) + _GOLDEN)
        return _mix(base + (idx + np.uint64(1)) * _GOLDEN)


def uniforms_at(keys, counters) -> np.ndarray:
    """Uniform draws in the open interval (0, 1) for each ``(key, counter)`` pair."""
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    counters = np.atleast_1d(np.asarray(counters, dtype=np.uint64))
    with np.errstate(over="ignore"):
        z = _mix(_mix(keys + (counters + np.uint64(1)) * _GOLDEN) + keys)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


class CounterStream:
    """Sequential view of one counter-based stream."""

    __slots__ = ("key", "counter")

    def __init__(self, key: int, counter: int = 0):
        self.key = int(key) & _MASK64
        self.counter = int(counter)

    @classmethod
    def for_trajectory(cls, master_seed: int, index: int) -> "CounterStream":
        return cls(int(derive_keys(master_seed, [index])[0]))

    def uniform(self) -> float:
        u = uniforms_at([self.key], [self.counter])[0]
        self.counter += 1
        return float(u)

    def uniforms(self, n: int) -> np.ndarray:
        out = uniforms_at(np.full(n, self.key, dtype=np.uint64),
                          np.arange(self.counter, self.counter + n, dtype=np.uint64))
        self.counter += n
        return out

    def __repr__(self):
        return f"CounterStream(key={self.key:#018x}, counter={self.counter})"


def as_stream(rng) -> CounterStream:
    """Accept a :class:`CounterStream` or an integer key."""
    if isinstance(rng, CounterStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return CounterStream(int(rng))
    raise TypeError(f"expected CounterStream or int seed, got {type(rng).__name__}")
