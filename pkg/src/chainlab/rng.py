"""Counter-based keyed randomness.

Every random quantity in chainlab is a pure function of (seed, key), where
the key is a lattice site or a Monte Carlo sample index.  Growing a window
or reordering a batch therefore never reshuffles previously drawn values.
The mixer is a double splitmix64 avalanche, vectorized over uint64 arrays.
"""
from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_KEY_OFFSET = np.int64(1) << np.int64(62)  # maps negative sites into uint64 range


def _mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def uniform01(seed: int, keys: np.ndarray, stream: int = 0) -> np.ndarray:
    """Uniform values in [0, 1), one per key, deterministic in (seed, key, stream)."""
    k = (np.asarray(keys, dtype=np.int64) + _KEY_OFFSET).astype(np.uint64)
    s = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _mix(np.uint64(stream)))
    h = _mix(s ^ _mix(k))
    return h.astype(np.float64) / 2.0**64


def uniform01_matrix(seed: int, n_rows: int, n_cols: int, stream: int = 0) -> np.ndarray:
    """(n_rows, n_cols) block of keyed uniforms; row-extension stable."""
    keys = np.arange(n_rows * n_cols, dtype=np.int64).reshape(n_rows, n_cols)
    return uniform01(seed, keys, stream=stream)
