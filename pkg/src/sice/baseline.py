"""Reference projected-gradient solver with Armijo backtracking.

Solves the same box-constrained log-det dual as :mod:`sice.solver` but with
the textbook globalization: each iteration backtracks the step length until
the trial point is positive definite *and* achieves sufficient decrease.  A
failed factorization counts as an ordinary Armijo rejection.  Trial points
only need the objective value (one Cholesky each); the gradient is computed
once per accepted iterate, reusing the accepted trial's factor.

Exists as the benchmark baseline; it enforces sufficient descent, so it is
a corrected rather than literal reproduction of simple projected gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .linalg import NotPositiveDefinite, frob_inner, logdet
from .objective import DualIterate, ProblemInstance, duality_gap_from_inverse, project_box
from .solver import Checkpoint, EvalCounter, SolverResult, Status, _counted_factor

__all__ = ["LineSearchStalled", "PgConfig", "solve_pg"]

STEP_UNDERFLOW = 1e-16


class LineSearchStalled(Exception):
    """Backtracking drove the step below 1e-16 without acceptance."""


@dataclass(frozen=True)
class PgConfig:
    """Armijo projected-gradient parameters (textbook defaults)."""

    t0: float = 1.0
    backtrack_factor: float = 0.5
    armijo_c: float = 1e-4
    eps: float = 1e-5
    max_iters: int = 100000

    def __post_init__(self):
        if self.t0 <= 0.0:
            raise ValueError("t0 must be positive")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not 0.0 < self.armijo_c < 1.0:
            raise ValueError("armijo_c must lie in (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def solve_pg(problem: ProblemInstance, cfg: PgConfig | None = None) -> SolverResult:
    """Armijo projected gradient on psi(U) = -log det(S+U) over the box.

    Accepted objective values are non-increasing by construction.  The trace
    reuses the checkpoint schema with one record per accepted iteration:
    ``delta`` holds the accepted step length, ``sigma_last`` is fixed at 1,
    ``fallback_halvings`` counts the iteration's rejected trials.
    """
    cfg = cfg if cfg is not None else PgConfig()
    counter = EvalCounter()
    t_start = time.perf_counter()

    u0 = np.diag(np.diag(problem.r))
    factor0 = _counted_factor(problem, u0, counter)
    counter.n_grad_evals += 1
    cur = DualIterate.from_factor(problem, u0, factor0)

    gap = duality_gap_from_inverse(problem, cur.x)
    trace = [
        Checkpoint(
            index=0,
            iters=0,
            seconds=time.perf_counter() - t_start,
            dual_value=cur.value,
            gap=gap,
            delta=cfg.t0,
            sigma_last=1.0,
            descent_passed=True,
            fallback_halvings=0,
            grad_evals=counter.n_grad_evals,
        )
    ]

    status = Status.BUDGET_EXHAUSTED
    if gap < cfg.eps:
        status = Status.CONVERGED
    else:
        t = cfg.t0
        for iteration in range(1, cfg.max_iters + 1):
            # Warm start one notch above the last accepted step, capped at t0.
            t = min(cfg.t0, t / cfg.backtrack_factor)
            rejections = 0
            while True:
                candidate = project_box(cur.u - t * cur.grad, problem.r)
                try:
                    factor = _counted_factor(problem, candidate, counter)
                except NotPositiveDefinite:
                    accepted = False
                else:
                    value = -logdet(factor)
                    predicted = frob_inner(cur.grad, cur.u - candidate)
                    accepted = cur.value - value >= cfg.armijo_c * predicted
                if accepted:
                    break
                rejections += 1
                t *= cfg.backtrack_factor
                if t < STEP_UNDERFLOW:
                    raise LineSearchStalled(
                        f"step underflowed below {STEP_UNDERFLOW:.0e} without acceptance"
                    )
            counter.n_grad_evals += 1
            cur = DualIterate.from_factor(problem, candidate, factor)
            gap = duality_gap_from_inverse(problem, cur.x)
            trace.append(
                Checkpoint(
                    index=iteration,
                    iters=iteration,
                    seconds=time.perf_counter() - t_start,
                    dual_value=cur.value,
                    gap=gap,
                    delta=t,
                    sigma_last=1.0,
                    descent_passed=True,
                    fallback_halvings=rejections,
                    grad_evals=counter.n_grad_evals,
                )
            )
            if gap < cfg.eps:
                status = Status.CONVERGED
                break

    return SolverResult(
        x_star=cur.x,
        u_star=cur.u,
        final_gap=gap,
        trace=tuple(trace),
        status=status,
        n_grad_evals=counter.n_grad_evals,
        n_cholesky=counter.n_cholesky,
        n_fallback_probes=counter.failed,
        config=cfg,
    )
