"""Sparse inverse covariance estimation via the box-constrained log-det dual."""

from .baseline import LineSearchStalled, PgConfig, solve_pg
from .datagen import (
    GenerationFailed,
    MatrixFormatError,
    SynthConfig,
    gen_synthetic,
    read_matrix,
    write_matrix,
)
from .linalg import NotPositiveDefinite
from .objective import (
    DualIterate,
    InvalidInstance,
    ProblemInstance,
    dual_gradient,
    dual_value,
    duality_gap,
    primal_value,
    project_box,
)
from .solver import (
    FallbackExhausted,
    SolverConfig,
    SolverResult,
    Status,
    check_optimality,
    solve,
)

__version__ = "0.1.0"
