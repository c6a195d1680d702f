"""Shared instance builders for the test suite."""

import numpy as np
import pytest

from sice.objective import DualIterate, ProblemInstance, project_box


def random_instance(rng: np.random.Generator, n: int) -> ProblemInstance:
    """Random well-conditioned instance: S = G G^T / n + I, positive penalties."""
    g = rng.standard_normal((n, n))
    s = g @ g.T / n + np.eye(n)
    r = 0.05 + 0.3 * rng.random((n, n))
    return ProblemInstance(s, (r + r.T) / 2.0)


def random_feasible_u(
    problem: ProblemInstance,
    rng: np.random.Generator,
    scale: float = 1.0,
    on_bounds: bool = False,
) -> np.ndarray:
    """Box-feasible symmetric U with S+U posdef (falls back to smaller moves).

    With ``on_bounds=True`` the raw draw overshoots the box so a good chunk
    of coordinates lands exactly on a bound after projection.
    """
    n = problem.n
    overshoot = 3.0 if on_bounds else 1.0
    for _ in range(60):
        raw = rng.uniform(-1.0, 1.0, size=(n, n))
        raw = (raw + raw.T) / 2.0 * overshoot * scale
        u = project_box(raw * problem.r, problem.r)
        try:
            DualIterate.evaluate(problem, u)
        except Exception:
            scale *= 0.5
            continue
        return u
    raise AssertionError("could not draw a feasible posdef iterate")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
