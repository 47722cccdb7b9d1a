"""Counter-based random streams.

Every uniform variate is a pure function of ``(seed, sample, step, slot)``:
the four integers are folded through the splitmix64 finalizer and the top
53 bits of the result are scaled to ``[0, 1)``.  Because nothing is carried
between draws, a sample's randomness does not depend on which batch (or which
worker process) generates it, so serial and parallel rollouts agree bit for
bit.

Slots partition the draws made at one step so that consumers never collide::

    POLICY_SLOT + k    k-th categorical draw of the policy (levels, then action)
    TARGET_SLOT        target move
    RESET_SLOT         initial state
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "POLICY_SLOT",
    "TARGET_SLOT",
    "RESET_SLOT",
    "mix64",
    "derive_seed",
    "uniforms",
    "Stream",
]

POLICY_SLOT = 0
TARGET_SLOT = 1 << 12
RESET_SLOT = 1 << 13

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1
_SCALE = 1.0 / (1 << 53)


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 output function applied elementwise to a uint64 array."""
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _u64(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.uint64, copy=False)
    return np.asarray(int(x) & _MASK, dtype=np.uint64)


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a child seed from ``seed`` and a path of integer keys."""
    h = mix64(_u64(seed))
    for k in keys:
        h = mix64(h ^ _u64(k))
    return int(h)


def uniforms(seed: int, ids, step: int, slots) -> np.ndarray:
    """Uniform variates in [0, 1) of shape ``ids.shape + slots.shape``.

    ``ids`` are sample indices, ``slots`` the per-step draw identifiers.
    """
    ids = np.asarray(ids, dtype=np.uint64)
    slots = np.asarray(slots, dtype=np.uint64)
    counter = (np.uint64(int(step) & 0xFFFFFFFF) << np.uint64(32)) | slots
    h = mix64(mix64(_u64(seed)) ^ ids)
    h = mix64(h.reshape(h.shape + (1,) * counter.ndim) ^ counter)
    return (h >> np.uint64(11)).astype(np.float64) * _SCALE


class Stream:
    """The random stream of one sample, i.e. ``uniforms`` with ``ids`` fixed.

    >>> s = Stream(7, 3)
    >>> s.uniform(0, TARGET_SLOT) == Stream(7, 3).uniform(0, TARGET_SLOT)
    True
    """

    def __init__(self, seed: int, index: int = 0):
        self.seed = int(seed)
        self.index = int(index)

    def uniform(self, step: int, slot: int) -> float:
        return float(uniforms(self.seed, np.array([self.index]), step, slot)[0])

    def __repr__(self) -> str:
        return f"Stream(seed={self.seed}, index={self.index})"
