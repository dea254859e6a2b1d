"""Order-independent summation: exact sums as binary fractions, rounded once.

Floating-point sums depend on the order of the additions.  The channel
descriptor of the attention gate is a spatial mean, and tiled inference
assembles that mean from pieces, so both paths sum exactly and round only
the final quotient.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

_HALF = 26  # mantissa split; each half stays exact in a float64 bincount
_MAX_COUNT = 1 << 26  # per-row bound that keeps the bincount totals below 2**53


def row_sums(a: np.ndarray) -> list:
    """Exact sum of every row of a finite 2-D float array, as Fractions."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"row_sums expects a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("row_sums: non-finite values")
    rows, n = a.shape
    if n > _MAX_COUNT:
        parts = [row_sums(a[:, i:i + _MAX_COUNT]) for i in range(0, n, _MAX_COUNT)]
        return [sum(col) for col in zip(*parts)]
    if n == 0:
        return [Fraction(0)] * rows
    m, e = np.frexp(a)
    mi = (m * 2.0**53).astype(np.int64)  # exact: |m| < 1 with at most 53 significant bits
    hi = mi >> _HALF
    lo = mi - (hi << _HALF)
    e0 = int(e.min())
    span = int(e.max()) - e0 + 1
    key = (np.arange(rows)[:, None] * span + (e - e0)).ravel()
    size = rows * span
    hs = np.bincount(key, weights=hi.ravel().astype(np.float64), minlength=size).reshape(rows, span)
    ls = np.bincount(key, weights=lo.ravel().astype(np.float64), minlength=size).reshape(rows, span)
    scale = Fraction(2) ** (e0 - 53)
    out = []
    for r in range(rows):
        total = 0
        for j in np.nonzero((hs[r] != 0) | (ls[r] != 0))[0]:
            total += ((int(hs[r, j]) << _HALF) + int(ls[r, j])) << int(j)
        out.append(total * scale)
    return out


def rounded_means(sums, count: int, dtype) -> np.ndarray:
    """Correctly rounded sum / count for each exact sum, cast to dtype."""
    if count < 1:
        raise ValueError("count must be positive")
    return np.array([float(s / count) for s in sums], dtype=np.float64).astype(dtype)


def exact_mean(a: np.ndarray, dtype=None) -> np.ndarray:
    """Mean over the last axis of a (..., n) array, independent of element order."""
    a = np.asarray(a)
    dtype = a.dtype if dtype is None else dtype
    flat = a.reshape(-1, a.shape[-1])
    return rounded_means(row_sums(flat), a.shape[-1], dtype).reshape(a.shape[:-1])
