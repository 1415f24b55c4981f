"""Dense LU factorization, signed log-determinant and inverse.

Everything operates on float64 numpy arrays. Factorization uses partial
(row) pivoting, which is adequate for the diagonally dominant Laplacians
built from positive edge weights.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

PIVOT_TOLERANCE = 1e-300


class DimensionError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    def __init__(self, pivot_index: int):
        super().__init__(f"matrix is singular (zero pivot at index {pivot_index})")
        self.pivot_index = pivot_index


def as_matrix(m) -> np.ndarray:
    """Validate ``m`` as a finite 2-D real matrix and return a float64 copy."""
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def _as_square(m) -> np.ndarray:
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class LUFactorization:
    """``P @ m == lower @ upper`` with ``P = np.eye(n)[perm]``."""

    perm: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sign: int
    singular: bool
    pivot_index: Optional[int] = None

    @property
    def permutation_matrix(self) -> np.ndarray:
        return np.eye(len(self.perm))[self.perm]


def lu_factorize(m) -> LUFactorization:
    a = _as_square(m)
    n = a.shape[0]
    perm = np.arange(n)
    sign = 1
    singular = False
    pivot_index = None
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
            sign = -sign
        pivot = a[k, k]
        if abs(pivot) < PIVOT_TOLERANCE:
            if not singular:
                singular, pivot_index = True, k
            continue
        if k + 1 < n:
            a[k + 1:, k] /= pivot
            a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    lower = np.tril(a, -1) + np.eye(n)
    upper = np.triu(a)
    return LUFactorization(perm, lower, upper, 0 if singular else sign, singular, pivot_index)


def sign_log_det(m) -> tuple[int, float]:
    """Return ``(sign, log|det m|)``; a singular matrix gives ``(0, -inf)``."""
    lu = lu_factorize(m)
    if lu.singular:
        return 0, -np.inf
    diag = np.diag(lu.upper)
    sign = lu.sign * int(np.prod(np.sign(diag)))
    return sign, float(np.sum(np.log(np.abs(diag))))


def lu_solve(lu: LUFactorization, b: np.ndarray) -> np.ndarray:
    if lu.singular:
        raise SingularMatrixError(lu.pivot_index)
    x = np.array(b, dtype=np.float64)[lu.perm]
    n = len(lu.perm)
    for i in range(1, n):
        x[i] -= lu.lower[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] -= lu.upper[i, i + 1:] @ x[i + 1:]
        x[i] /= lu.upper[i, i]
    return x


def inverse(m) -> np.ndarray:
    lu = lu_factorize(m)
    if lu.singular:
        raise SingularMatrixError(lu.pivot_index)
    return lu_solve(lu, np.eye(len(lu.perm)))


def log_det_and_inverse(m) -> tuple[int, float, np.ndarray]:
    """Signed log-determinant and inverse from a single factorization."""
    lu = lu_factorize(m)
    if lu.singular:
        raise SingularMatrixError(lu.pivot_index)
    diag = np.diag(lu.upper)
    sign = lu.sign * int(np.prod(np.sign(diag)))
    return sign, float(np.sum(np.log(np.abs(diag)))), lu_solve(lu, np.eye(len(lu.perm)))


def mmatrix_eliminate(off, excess, rhs=None):
    """Subtraction-free Gaussian elimination for row diagonally dominant M-matrices.

    The matrix is given implicitly: ``off[..., i, j] >= 0`` is the magnitude of
    the off-diagonal entry (the diagonal of ``off`` is ignored) and
    ``excess[..., i] >= 0`` is the row sum, so ``W[i, i] = excess[i] +
    sum_j off[i, j]``. Pivots are rebuilt from excess plus remaining
    off-diagonals instead of by subtraction, which keeps every pivot and every
    solution entry accurate to a few ulps in relative terms even when ``W`` is
    nearly singular. Leading axes are batch axes.

    Returns ``(pivots, x)`` where ``x`` solves ``W x = rhs`` (``None`` without
    ``rhs``). The determinant is ``prod(pivots)``. Raises SingularMatrixError
    on a pivot below :data:`PIVOT_TOLERANCE`.
    """
    off = np.array(off, dtype=np.float64)
    excess = np.array(excess, dtype=np.float64)
    n = off.shape[-1]
    if off.shape[-2:] != (n, n) or excess.shape != off.shape[:-1]:
        raise DimensionError(f"inconsistent shapes {off.shape} and {excess.shape}")
    if np.any(off < 0) or np.any(excess < 0):
        raise ValueError("off-diagonal magnitudes and excesses must be non-negative")
    diag = np.arange(n)
    off[..., diag, diag] = 0.0
    b = None if rhs is None else np.array(rhs, dtype=np.float64)
    pivots = np.empty(excess.shape)
    for k in range(n):
        p = excess[..., k] + off[..., k, k + 1:].sum(axis=-1)
        if np.any(p < PIVOT_TOLERANCE):
            raise SingularMatrixError(k)
        pivots[..., k] = p
        col = off[..., k + 1:, k] / p[..., None]
        off[..., k + 1:, k + 1:] += col[..., :, None] * off[..., k, None, k + 1:]
        off[..., diag[k + 1:], diag[k + 1:]] = 0.0
        excess[..., k + 1:] += col * excess[..., k, None]
        if b is not None:
            b[..., k + 1:] += col * b[..., k, None]
    if b is None:
        return pivots, None
    x = np.zeros_like(b)
    for k in range(n - 1, -1, -1):
        x[..., k] = (b[..., k] + (off[..., k, k + 1:] * x[..., k + 1:]).sum(axis=-1)) / pivots[..., k]
    return pivots, x
