"""Pure NumPy/python kernel fallback.

Implements the exact operation-order contract of the compiled core, so both
backends are bitwise interchangeable:

  * matmul-family reductions accumulate over the contraction index in
    ascending order, one multiply then one add per term, starting from 0.0;
  * row/column/total sums use a single accumulator walked in ascending
    (row-major for `sum_all`) order;
  * transcendental maps call libm via :mod:`math`, element by element.

Element-wise arithmetic (one IEEE-754 operation per element) needs no special
treatment: NumPy and C produce identical bits for it by definition.
"""

from __future__ import annotations

import math

import numpy as np


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C = A @ B with out[i,j] = sum_k a[i,k]*b[k,j], k ascending."""
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ValueError("matmul: inner dimensions differ")
    out = np.zeros((m, n), dtype=np.float64)
    for kk in range(k):
        out += a[:, kk : kk + 1] * b[kk, :]
    return out


def matmul_at_b(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C = A.T @ B with out[p,q] = sum_r a[r,p]*b[r,q], r ascending."""
    r, p = a.shape
    r2, q = b.shape
    if r != r2:
        raise ValueError("matmul_at_b: leading dimensions differ")
    out = np.zeros((p, q), dtype=np.float64)
    for rr in range(r):
        out += a[rr, :, None] * b[rr, None, :]
    return out


def matmul_a_bt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """C = A @ B.T with out[i,p] = sum_j a[i,j]*b[p,j], j ascending."""
    m, k = a.shape
    p, k2 = b.shape
    if k != k2:
        raise ValueError("matmul_a_bt: trailing dimensions differ")
    out = np.zeros((m, p), dtype=np.float64)
    for j in range(k):
        out += a[:, j : j + 1] * b[None, :, j]
    return out


def colsum(m: np.ndarray) -> np.ndarray:
    """out[j] = sum over rows of m[r,j], r ascending."""
    rows, cols = m.shape
    out = np.zeros(cols, dtype=np.float64)
    for r in range(rows):
        out += m[r, :]
    return out


def rowsum(m: np.ndarray) -> np.ndarray:
    """out[i] = sum over columns of m[i,c], c ascending."""
    rows, cols = m.shape
    out = np.zeros(rows, dtype=np.float64)
    for c in range(cols):
        out += m[:, c]
    return out


def sum_all(m: np.ndarray) -> float:
    """Single accumulator over all elements in row-major order."""
    total = 0.0
    for v in m.ravel(order="C").tolist():
        total += v
    return total


def map_tanh(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    flat_in = z.ravel(order="C")
    flat_out = out.ravel(order="C")
    for i, v in enumerate(flat_in.tolist()):
        flat_out[i] = math.tanh(v)
    return out


def map_exp(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    flat_in = z.ravel(order="C")
    flat_out = out.ravel(order="C")
    for i, v in enumerate(flat_in.tolist()):
        flat_out[i] = math.exp(v)
    return out
