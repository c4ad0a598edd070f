"""Counter-based random streams.

Every uniform is a pure function of ``(seed, replicate, step, purpose, stage,
index)``: the first five fields are folded into a 64-bit stream key, and the
index selects a position in a SplitMix64 sequence started at that key.  Draws
therefore never depend on execution order, which is what makes index-parallel
and replicate-parallel runs bit-identical to serial ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53

# stream purposes
INIT = 1
MUTATE = 2
RESAMPLE = 3


@numba.njit(inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(inline="always")
def absorb(key, value):
    return mix64(np.uint64(key) ^ (np.uint64(value) * _GOLDEN + _ONE))


@numba.njit
def replicate_key(seed, replicate):
    return absorb(absorb(mix64(np.uint64(0x5EED)), seed), replicate)


@numba.njit
def stream_key(rep_key, step, purpose, stage):
    return absorb(absorb(absorb(rep_key, step), purpose), stage)


@numba.njit(inline="always")
def uniform_at(key, index):
    """The ``index``-th uniform on [0, 1) of stream ``key``."""
    z = mix64(np.uint64(key) + (np.uint64(index) + _ONE) * _GOLDEN)
    return np.float64(np.int64(z >> _S11)) * _TO_UNIT


@numba.njit
def uniforms(key, n):
    key = np.uint64(key)
    out = np.empty(n)
    for i in range(n):
        out[i] = uniform_at(key, i)
    return out


@dataclass(frozen=True)
class Streams:
    """Stream factory for one replicate of one experiment."""

    seed: int
    replicate: int = 0

    @property
    def key(self) -> np.uint64:
        return np.uint64(replicate_key(np.uint64(self.seed), np.uint64(self.replicate)))

    def stream(self, step: int, purpose: int, stage: int = 0) -> np.uint64:
        return np.uint64(stream_key(self.key, np.uint64(step), np.uint64(purpose), np.uint64(stage)))

    def uniforms(self, step: int, purpose: int, stage: int, n: int) -> np.ndarray:
        return uniforms(self.stream(step, purpose, stage), n)
