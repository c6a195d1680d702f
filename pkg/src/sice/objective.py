"""Objectives, gradient, duality gap, box projection and binding sets.

The estimation problem minimizes ``trace(S X) - log det X + sum_ij r_ij |x_ij|``
over positive definite X.  Its dual minimizes ``psi(U) = -log det(S + U)``
over the box ``|u_ij| <= r_ij``, and the primal point is recovered as
``X_U = (S + U)^{-1} = -grad psi(U)``.  The duality gap

    gap(U) = trace(S X_U) + sum_ij r_ij |[X_U]_ij| - n

is zero at the optimum and is the solvers' stopping measure.

Box-bound coordinates are tracked with exact floating equality: the
projection writes the bound value verbatim when it clamps, so membership
tests against ``+/- r_ij`` need no epsilon band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    NotPositiveDefinite,
    cholesky,
    frob_inner,
    inverse_from_factor,
    logdet,
    sym_matrix,
)

__all__ = [
    "InvalidInstance",
    "ProblemInstance",
    "DualIterate",
    "dual_value",
    "dual_gradient",
    "primal_value",
    "duality_gap",
    "duality_gap_from_inverse",
    "project_box",
    "active_set",
    "binding_mask",
    "binding_set",
]


class InvalidInstance(ValueError):
    """Problem data violates the feasibility restriction."""


@dataclass(frozen=True)
class ProblemInstance:
    """Sample covariance ``s`` and elementwise penalty matrix ``r``.

    Requires r >= 0 elementwise and S + Diag(r) strictly positive definite,
    which guarantees the problem has a (unique) solution.
    """

    s: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        s = sym_matrix(self.s)
        r = sym_matrix(self.r)
        if s.shape != r.shape:
            raise InvalidInstance(
                f"covariance and penalty shapes differ: {s.shape} vs {r.shape}"
            )
        if np.any(r < 0.0):
            raise InvalidInstance("penalty matrix has negative entries")
        try:
            cholesky(s + np.diag(np.diag(r)))
        except NotPositiveDefinite as err:
            raise InvalidInstance(
                "S + Diag(R) is not positive definite"
            ) from err
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class DualIterate:
    """A box-feasible dual point with its factorization cache.

    The cache (Cholesky factor of S+U, recovered primal point, gradient,
    objective value) is populated once at construction, so each accepted
    iterate costs exactly one factorization and one inverse.
    """

    u: np.ndarray
    factor: np.ndarray
    x: np.ndarray
    grad: np.ndarray
    value: float

    @classmethod
    def evaluate(cls, problem: ProblemInstance, u: np.ndarray) -> "DualIterate":
        """Factor S+U and cache value/gradient; raises NotPositiveDefinite."""
        factor = cholesky(problem.s + u)
        return cls.from_factor(problem, u, factor)

    @classmethod
    def from_factor(
        cls, problem: ProblemInstance, u: np.ndarray, factor: np.ndarray
    ) -> "DualIterate":
        """Build the cache from an existing factor of S+U (no refactorization)."""
        x = inverse_from_factor(factor)
        u = np.asarray(u)
        u.flags.writeable = False
        return cls(u=u, factor=factor, x=x, grad=-x, value=-logdet(factor))


def dual_value(problem: ProblemInstance, u: np.ndarray) -> float:
    """psi(U) = -log det(S + U); raises NotPositiveDefinite off the cone."""
    return -logdet(cholesky(problem.s + u))


def dual_gradient(problem: ProblemInstance, u: np.ndarray) -> np.ndarray:
    """grad psi(U) = -(S + U)^{-1}; the recovered primal point is -gradient."""
    return -inverse_from_factor(cholesky(problem.s + u))


def primal_value(problem: ProblemInstance, x: np.ndarray) -> float:
    """trace(S X) - log det X + sum_ij r_ij |x_ij| for posdef X."""
    return (
        frob_inner(problem.s, x)
        - logdet(cholesky(x))
        + frob_inner(problem.r, np.abs(x))
    )


def duality_gap_from_inverse(problem: ProblemInstance, x_u: np.ndarray) -> float:
    """Gap evaluated from an already-computed X_U = (S+U)^{-1} (no O(n^3) work)."""
    return (
        frob_inner(problem.s, x_u)
        + frob_inner(problem.r, np.abs(x_u))
        - problem.n
    )


def duality_gap(problem: ProblemInstance, u: np.ndarray) -> float:
    """trace(S X_U) + sum_ij r_ij |[X_U]_ij| - n, nonnegative up to round-off."""
    x_u = inverse_from_factor(cholesky(problem.s + u))
    return duality_gap_from_inverse(problem, x_u)


def project_box(u: np.ndarray, penalty: np.ndarray) -> np.ndarray:
    """Clamp each entry to [-r_ij, r_ij]; clamped entries carry the bound bit-exactly."""
    if u.shape != penalty.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {penalty.shape}")
    return np.clip(u, -penalty, penalty)


def active_set(u: np.ndarray, penalty: np.ndarray) -> frozenset:
    """Upper-triangle pairs (i, j), i <= j, with |u_ij| exactly equal to r_ij."""
    hit = np.abs(u) == penalty
    ii, jj = np.nonzero(np.triu(hit))
    return frozenset(zip(ii.tolist(), jj.tolist()))


def binding_mask(u: np.ndarray, grad: np.ndarray, penalty: np.ndarray) -> np.ndarray:
    """Boolean matrix of coordinates bound to stay on their box face.

    A coordinate is binding when it sits on a bound and the gradient pushes
    outward: u_ij == -r_ij with d_ij psi > 0, or u_ij == r_ij with
    d_ij psi < 0.  Sign inequalities are strict; a zero partial derivative
    at a bound is not binding.
    """
    return ((u == -penalty) & (grad > 0.0)) | ((u == penalty) & (grad < 0.0))


def binding_set(u: np.ndarray, grad: np.ndarray, penalty: np.ndarray) -> frozenset:
    """Binding coordinates as upper-triangle pairs; a subset of the active set."""
    ii, jj = np.nonzero(np.triu(binding_mask(u, grad, penalty)))
    return frozenset(zip(ii.tolist(), jj.tolist()))
