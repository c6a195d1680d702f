"""Dense symmetric-matrix kernels.

Everything downstream (objective values, gradients, solvers, the data
generator) goes through these few operations: Cholesky factorization,
log-determinant and inverse from a factor, and the full-matrix elementwise
inner product.  Positive definiteness is decided operationally: a matrix is
posdef iff its Cholesky factorization succeeds, so the test costs nothing
beyond the factorization we need anyway.

All returned matrices are float64 and marked read-only; callers treat them
as immutable values.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


ASYMMETRY_TOL = 1e-12


class NotPositiveDefinite(Exception):
    """Cholesky factorization hit a pivot at or below the pivot floor."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def sym_matrix(entries, strict: bool = True) -> np.ndarray:
    """Build a symmetric float64 matrix, symmetrizing by averaging.

    With ``strict=True`` input whose asymmetry exceeds ``ASYMMETRY_TOL`` in
    max-abs is rejected.  Always returns ``(A + A.T) / 2`` as a read-only
    array, so bit-exact symmetry holds regardless of the input.
    """
    a = np.array(entries, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError("matrix dimension must be at least 1")
    if strict:
        skew = np.max(np.abs(a - a.T)) if a.size else 0.0
        if skew > ASYMMETRY_TOL:
            raise ValueError(f"matrix asymmetry {skew:.3e} exceeds {ASYMMETRY_TOL:.0e}")
    return _freeze((a + a.T) / 2.0)


def cholesky(a: np.ndarray, pivot_floor: float = 0.0) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == a.

    Raises :class:`NotPositiveDefinite` when a pivot would be <= ``pivot_floor``
    (default 0, i.e. the matrix is not strictly positive definite).  Only the
    lower triangle of ``a`` is referenced; symmetry is the caller's contract.
    """
    try:
        factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefinite(str(err)) from err
    if pivot_floor > 0.0:
        # LAPACK pivots are the squared diagonal entries of L.
        if np.min(np.diag(factor)) ** 2 <= pivot_floor:
            raise NotPositiveDefinite(
                f"pivot below floor {pivot_floor:.3e}"
            )
    return _freeze(factor)


def logdet(factor: np.ndarray) -> float:
    """log det of the factored matrix: 2 * sum(log diag(L))."""
    return 2.0 * float(np.sum(np.log(np.diag(factor))))


def inverse_from_factor(factor: np.ndarray) -> np.ndarray:
    """Inverse of the factored matrix, symmetrized against solve round-off."""
    n = factor.shape[0]
    inv = scipy.linalg.cho_solve((factor, True), np.eye(n), check_finite=False)
    return _freeze((inv + inv.T) / 2.0)


def frob_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Elementwise inner product sum_ij a_ij * b_ij (both triangles counted).

    Equals trace(a @ b) for symmetric arguments and ||a||_F^2 for a == b.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))
