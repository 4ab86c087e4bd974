"""Numeric kernels with a compiled core and a pure fallback.

The Cython extension (`dualmarket._kernels._core`) is preferred when it was
built; otherwise the pure NumPy/python implementation is used. Both follow
the same fixed operation-order contract (see `pure`), so results are
bitwise-identical across backends and a simulation report does not depend on
which one is active.

Set ``DUALMARKET_PURE=1`` to force the fallback (used by the benchmark and
the backend-parity tests).
"""

from __future__ import annotations

import os

import numpy as np

from . import pure as _pure

if os.environ.get("DUALMARKET_PURE") == "1":
    _impl = _pure
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "pure"


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def matmul(a, b):
    return np.asarray(_impl.matmul(_c(a), _c(b)))


def matmul_at_b(a, b):
    return np.asarray(_impl.matmul_at_b(_c(a), _c(b)))


def matmul_a_bt(a, b):
    return np.asarray(_impl.matmul_a_bt(_c(a), _c(b)))


def colsum(m):
    return np.asarray(_impl.colsum(_c(m)))


def rowsum(m):
    return np.asarray(_impl.rowsum(_c(m)))


def sum_all(m) -> float:
    return float(_impl.sum_all(_c(m)))


def map_tanh(z):
    return np.asarray(_impl.map_tanh(_c(z)))


def map_exp(z):
    return np.asarray(_impl.map_exp(_c(z)))
