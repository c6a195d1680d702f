"""Adaptive modified-BB projected-gradient solver for the dual box problem.

The solver runs fixed-length blocks of M projected gradient steps.  Within a
block every step uses a Barzilai-Borwein coefficient computed only over the
coordinates *not* in the binding set (bound coordinates are guaranteed to
stay on their face, so they carry no curvature information), clamped into
[sigma_min, sigma_max], with the two BB formulas alternating step by step.
All steps in a block share one scale delta.

Each block ends at a checkpoint: positive definiteness is enforced (by
backtracking toward the block's start if a factorization failed), a
sufficient-descent test decides whether delta shrinks by eta, and the
duality gap decides termination.  The diminishment is optimistic: a failed
descent test shrinks delta exactly once and the block's iterate is kept --
no step is ever rejected or recomputed.
"""

from __future__ import annotations

import csv
import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import NotPositiveDefinite, cholesky, frob_inner
from .objective import (
    DualIterate,
    ProblemInstance,
    binding_mask,
    duality_gap_from_inverse,
    project_box,
)

__all__ = [
    "FallbackExhausted",
    "Status",
    "SolverConfig",
    "StepState",
    "Checkpoint",
    "SolverResult",
    "EvalCounter",
    "TRACE_COLUMNS",
    "write_trace_csv",
    "mbb_sigma",
    "inner_loop",
    "descent_check",
    "enforce_posdef",
    "solve",
    "check_optimality",
]

DEGENERATE_CURVATURE = 1e-16


class FallbackExhausted(Exception):
    """Posdef backtracking ran out of halvings; the anchor iterate is corrupt."""


class Status(enum.Enum):
    CONVERGED = "converged"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs; defaults follow spectral-gradient practice.

    m                      steps per checkpoint block
    kappa                  sufficient-descent parameter, in (0, 1)
    eta                    scale diminishment factor, in (0, 1)
    delta0                 initial step scale
    sigma_min, sigma_max   safeguard clamp for the BB coefficient
    eps                    duality-gap stopping threshold
    max_checkpoints        block budget before giving up
    fallback_max_halvings  posdef backtracking budget per repair
    """

    m: int = 10
    kappa: float = 1e-4
    eta: float = 0.8
    delta0: float = 1.0
    sigma_min: float = 1e-8
    sigma_max: float = 1e8
    eps: float = 1e-5
    max_checkpoints: int = 10000
    fallback_max_halvings: int = 40

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if self.delta0 <= 0.0:
            raise ValueError("delta0 must be positive")
        if not 0.0 < self.sigma_min <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.max_checkpoints < 1:
            raise ValueError("max_checkpoints must be >= 1")
        if self.fallback_max_halvings < 1:
            raise ValueError("fallback_max_halvings must be >= 1")


@dataclass(frozen=True)
class StepState:
    """BB bookkeeping: the two most recent iterates and their gradients.

    ``u_prev`` is the point the next step leaves from, ``u_prev2`` the one
    before it.  ``next_formula`` ('a' or 'b') flips on every MBB step taken;
    ``sigma_last`` is the most recent clamped coefficient.
    """

    u_prev: np.ndarray
    u_prev2: np.ndarray
    grad_prev: np.ndarray
    grad_prev2: np.ndarray
    next_formula: str = "a"
    sigma_last: float = 1.0


@dataclass(frozen=True)
class Checkpoint:
    """One trace record, written every M iterations.

    ``iters`` counts iterates produced after initialization (inner steps plus
    repaired iterates).  ``delta`` is the scale in force after this
    checkpoint's descent decision.  ``grad_evals`` and ``formulas`` are
    in-memory extras not written to CSV.
    """

    index: int
    iters: int
    seconds: float
    dual_value: float
    gap: float
    delta: float
    sigma_last: float
    descent_passed: bool
    fallback_halvings: int
    grad_evals: int = 0
    formulas: tuple = ()


TRACE_COLUMNS = (
    "checkpoint",
    "iters",
    "seconds",
    "dual_value",
    "gap",
    "delta",
    "sigma_last",
    "descent_passed",
    "fallback_halvings",
)


def write_trace_csv(trace, path) -> None:
    """Write checkpoint records with the fixed nine-column schema."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        for rec in trace:
            writer.writerow(
                [
                    rec.index,
                    rec.iters,
                    f"{rec.seconds:.17g}",
                    f"{rec.dual_value:.17g}",
                    f"{rec.gap:.17g}",
                    f"{rec.delta:.17g}",
                    f"{rec.sigma_last:.17g}",
                    rec.descent_passed,
                    rec.fallback_halvings,
                ]
            )


@dataclass
class EvalCounter:
    """Factorization accounting: one Cholesky+inverse per iterate, plus probes.

    ``failed`` counts factorization attempts that did not yield an iterate
    (posdef detection and failed backtracking probes), so
    ``n_cholesky == n_grad_evals + failed`` must hold after any run.
    """

    n_cholesky: int = 0
    n_grad_evals: int = 0
    failed: int = 0


@dataclass(frozen=True)
class SolverResult:
    """Final primal/dual pair, gap, trace and instrumentation counters."""

    x_star: np.ndarray
    u_star: np.ndarray
    final_gap: float
    trace: tuple
    status: Status
    n_grad_evals: int
    n_cholesky: int
    n_fallback_probes: int
    config: object = None


def _counted_factor(problem: ProblemInstance, u: np.ndarray, counter: EvalCounter):
    counter.n_cholesky += 1
    try:
        return cholesky(problem.s + u)
    except NotPositiveDefinite:
        counter.failed += 1
        raise


def _counted_evaluate(
    problem: ProblemInstance, u: np.ndarray, counter: EvalCounter
) -> DualIterate:
    factor = _counted_factor(problem, u, counter)
    counter.n_grad_evals += 1
    return DualIterate.from_factor(problem, u, factor)


def _mid(lo: float, x: float, hi: float) -> float:
    return min(max(x, lo), hi)


def mbb_sigma(
    state: StepState | None,
    binding: np.ndarray,
    formula: str,
    cfg: SolverConfig,
) -> float:
    """Safeguard-clamped BB coefficient restricted to non-binding coordinates.

    ``binding`` is a boolean matrix; binding entries are zeroed out of the
    iterate and gradient differences.  Formula 'a' is ||s||_F^2 / <s, y>,
    formula 'b' is <s, y> / ||y||_F^2.  Nonpositive curvature (or a ratio
    that is not finite) falls back to sigma_max; with no history the
    coefficient is a clamped unit step.

    The curvature test is a sign test, not an absolute threshold: near the
    optimum both differences shrink together, so a tiny positive <s, y>
    still yields a well-scaled ratio, and flooring it would inject
    sigma_max steps that destroy converged digits.
    """
    if state is None:
        return _mid(cfg.sigma_min, 1.0, cfg.sigma_max)
    keep = ~binding
    s = (state.u_prev - state.u_prev2) * keep
    y = (state.grad_prev - state.grad_prev2) * keep
    curvature = float(np.sum(s * y))
    if curvature <= 0.0:
        return cfg.sigma_max
    if formula == "a":
        sigma = float(np.sum(s * s)) / curvature
    elif formula == "b":
        denom = float(np.sum(y * y))
        sigma = curvature / denom if denom > 0.0 else np.inf
    else:
        raise ValueError(f"unknown BB formula {formula!r}")
    if not np.isfinite(sigma):
        return cfg.sigma_max
    return _mid(cfg.sigma_min, sigma, cfg.sigma_max)


@dataclass(frozen=True)
class InnerBlock:
    """Outcome of one M-step block: final iterate, updated BB state, and
    either None or the index of the step whose factorization failed together
    with the offending candidate."""

    end: DualIterate
    state: StepState
    failed_at: int | None
    failed_candidate: np.ndarray | None
    sigmas: tuple
    formulas: tuple


def _flip(formula: str) -> str:
    return "b" if formula == "a" else "a"


def inner_loop(
    problem: ProblemInstance,
    start: DualIterate,
    state: StepState,
    delta: float,
    cfg: SolverConfig,
    counter: EvalCounter | None = None,
) -> InnerBlock:
    """Up to M projected MBB steps at fixed scale delta.

    The binding set is recomputed from the current iterate's gradient at
    every step, and each step costs exactly one gradient evaluation.  The
    block stops early at the first candidate whose factorization fails and
    reports that step's index; the failure is an outcome, not an error.
    """
    counter = counter if counter is not None else EvalCounter()
    cur = start
    sigmas: list[float] = []
    formulas: list[str] = []
    for j in range(cfg.m):
        mask = binding_mask(cur.u, cur.grad, problem.r)
        formula = state.next_formula
        sigma = mbb_sigma(state, mask, formula, cfg)
        sigmas.append(sigma)
        formulas.append(formula)
        candidate = project_box(cur.u - (delta * sigma) * cur.grad, problem.r)
        assert np.all(np.abs(candidate) <= problem.r), "iterate left the box"
        try:
            nxt = _counted_evaluate(problem, candidate, counter)
        except NotPositiveDefinite:
            failed_state = StepState(
                u_prev=cur.u,
                u_prev2=state.u_prev2,
                grad_prev=cur.grad,
                grad_prev2=state.grad_prev2,
                next_formula=_flip(formula),
                sigma_last=sigma,
            )
            return InnerBlock(
                end=cur,
                state=failed_state,
                failed_at=j,
                failed_candidate=candidate,
                sigmas=tuple(sigmas),
                formulas=tuple(formulas),
            )
        state = StepState(
            u_prev=nxt.u,
            u_prev2=cur.u,
            grad_prev=nxt.grad,
            grad_prev2=cur.grad,
            next_formula=_flip(formula),
            sigma_last=sigma,
        )
        cur = nxt
    return InnerBlock(
        end=cur,
        state=state,
        failed_at=None,
        failed_candidate=None,
        sigmas=tuple(sigmas),
        formulas=tuple(formulas),
    )


def descent_check(
    problem: ProblemInstance,
    block_start: DualIterate,
    block_end: DualIterate,
    kappa: float,
) -> bool:
    """Sufficient decrease over the block (non-strict inequality):

    psi(start) - psi(end) >= kappa * <grad psi(start), start - end>.
    """
    drop = block_start.value - block_end.value
    predicted = frob_inner(block_start.grad, block_start.u - block_end.u)
    return drop >= kappa * predicted


def enforce_posdef(
    problem: ProblemInstance,
    anchor: DualIterate,
    bad_u: np.ndarray,
    cfg: SolverConfig,
    counter: EvalCounter | None = None,
) -> tuple[DualIterate, int]:
    """Backtrack from a non-posdef candidate toward a known-posdef anchor.

    Returns the first point anchor + (1/2)^t (bad - anchor), t >= 1, whose
    factorization succeeds, together with t.  The segment lies inside the
    box, so the repaired iterate is feasible.  Exhausting the halving budget
    means the anchor itself was not posdef; that is a corrupted-state abort.
    """
    counter = counter if counter is not None else EvalCounter()
    direction = bad_u - anchor.u
    for t in range(1, cfg.fallback_max_halvings + 1):
        candidate = project_box(anchor.u + (0.5**t) * direction, problem.r)
        try:
            factor = _counted_factor(problem, candidate, counter)
        except NotPositiveDefinite:
            continue
        counter.n_grad_evals += 1
        return DualIterate.from_factor(problem, candidate, factor), t
    raise FallbackExhausted(
        f"no posdef point within {cfg.fallback_max_halvings} halvings of the anchor"
    )


def _initial_pair(
    problem: ProblemInstance, cfg: SolverConfig, counter: EvalCounter
) -> tuple[DualIterate, DualIterate, int]:
    """Cold start: U0 = Diag(R), then one projected gradient step halved
    until posdef.  Termination is guaranteed because the candidate collapses
    onto U0 as the step vanishes."""
    u0 = np.diag(np.diag(problem.r))
    it0 = _counted_evaluate(problem, u0, counter)
    t, halvings = 1.0, 0
    while True:
        u1 = project_box(it0.u - t * it0.grad, problem.r)
        try:
            return it0, _counted_evaluate(problem, u1, counter), halvings
        except NotPositiveDefinite:
            t *= 0.5
            halvings += 1
            if halvings > 200:
                raise FallbackExhausted("could not find a posdef second iterate")


def solve(problem: ProblemInstance, cfg: SolverConfig | None = None) -> SolverResult:
    """Run the full outer loop until the duality gap drops below cfg.eps.

    The gap is measured only at checkpoints (every M iterations).  On a
    failed descent test the scale shrinks by eta exactly once and iteration
    continues; blocks are never redone.  Status is CONVERGED when the gap
    test passes at some checkpoint (including the budget's last one) and
    BUDGET_EXHAUSTED otherwise.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    counter = EvalCounter()
    t_start = time.perf_counter()

    it0, cur, u1_halvings = _initial_pair(problem, cfg, counter)
    state = StepState(
        u_prev=cur.u,
        u_prev2=it0.u,
        grad_prev=cur.grad,
        grad_prev2=it0.grad,
        next_formula="a",
        sigma_last=_mid(cfg.sigma_min, 1.0, cfg.sigma_max),
    )
    delta = cfg.delta0
    iters = 0
    gap = duality_gap_from_inverse(problem, cur.x)
    trace = [
        Checkpoint(
            index=0,
            iters=0,
            seconds=time.perf_counter() - t_start,
            dual_value=cur.value,
            gap=gap,
            delta=delta,
            sigma_last=state.sigma_last,
            descent_passed=True,
            fallback_halvings=u1_halvings,
            grad_evals=counter.n_grad_evals,
        )
    ]

    status = Status.BUDGET_EXHAUSTED
    if gap < cfg.eps:
        status = Status.CONVERGED
    else:
        for checkpoint in range(1, cfg.max_checkpoints + 1):
            anchor = cur
            block = inner_loop(problem, cur, state, delta, cfg, counter)
            halvings = 0
            if block.failed_at is None:
                cur = block.end
                state = block.state
                iters += cfg.m
            else:
                repaired, halvings = enforce_posdef(
                    problem, anchor, block.failed_candidate, cfg, counter
                )
                state = StepState(
                    u_prev=repaired.u,
                    u_prev2=block.end.u,
                    grad_prev=repaired.grad,
                    grad_prev2=block.end.grad,
                    next_formula=block.state.next_formula,
                    sigma_last=block.state.sigma_last,
                )
                cur = repaired
                iters += block.failed_at + 1
            passed = descent_check(problem, anchor, cur, cfg.kappa)
            if not passed:
                delta = cfg.eta * delta
            gap = duality_gap_from_inverse(problem, cur.x)
            trace.append(
                Checkpoint(
                    index=checkpoint,
                    iters=iters,
                    seconds=time.perf_counter() - t_start,
                    dual_value=cur.value,
                    gap=gap,
                    delta=delta,
                    sigma_last=state.sigma_last,
                    descent_passed=passed,
                    fallback_halvings=halvings,
                    grad_evals=counter.n_grad_evals,
                    formulas=block.formulas,
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


def check_optimality(
    problem: ProblemInstance, result: SolverResult
) -> tuple[float, float]:
    """Residuals of the optimality identities X*(S+U*) = I and
    trace(X* U*) = trace(R |X*|); the second equals the final gap."""
    x, u = result.x_star, result.u_star
    residual_inverse = float(
        np.max(np.abs(x @ (problem.s + u) - np.eye(problem.n)))
    )
    residual_complementarity = abs(
        frob_inner(x, u) - frob_inner(problem.r, np.abs(x))
    )
    return residual_inverse, residual_complementarity
