"""Command-line surface: generate instances, run solvers, benchmark.

Subcommands:

  gen    write a synthetic covariance matrix (plus a sidecar metadata file)
  solve  run one solver on a matrix file, writing the solution and trace CSV
  bench  time-to-gap table over sizes x methods x gap levels, as CSV

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 invalid instance,
4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
from dataclasses import dataclass

import numpy as np

from .baseline import LineSearchStalled, PgConfig, solve_pg
from .datagen import (
    GenerationFailed,
    MatrixFormatError,
    SynthConfig,
    gen_synthetic,
    metadata_line,
    read_matrix,
    write_matrix,
)
from .objective import InvalidInstance, ProblemInstance
from .solver import (
    FallbackExhausted,
    SolverConfig,
    Status,
    solve,
    write_trace_csv,
)

__all__ = ["BenchSpec", "BenchRow", "run_bench", "first_attainment", "main", "entry"]

BENCH_COLUMNS = ("n", "method", "eps", "seconds_median", "iters_median", "attained")
DEFAULT_BENCH_RHO = 0.1


@dataclass(frozen=True)
class BenchSpec:
    """One benchmark campaign: sizes x methods, timed at each gap level."""

    sizes: tuple
    eps_levels: tuple
    methods: tuple
    reps: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.sizes or any(n < 2 for n in self.sizes):
            raise ValueError("sizes must all be >= 2")
        if not self.eps_levels or any(e <= 0 for e in self.eps_levels):
            raise ValueError("eps levels must be positive")
        if any(a <= b for a, b in zip(self.eps_levels[1:], self.eps_levels)):
            raise ValueError("eps levels must be strictly decreasing")
        if not self.methods or any(m not in ("sice", "pg") for m in self.methods):
            raise ValueError("methods must be a nonempty subset of {sice, pg}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")


@dataclass(frozen=True)
class BenchRow:
    n: int
    method: str
    eps: float
    seconds_median: float | None
    iters_median: float | None
    attained: bool


def first_attainment(trace, level: float):
    """First checkpoint record with measured gap <= level, or None.

    The gap sequence is non-monotone; only the first crossing counts even if
    the gap later rises above the level again.
    """
    for rec in trace:
        if rec.gap <= level:
            return rec
    return None


def _run_method(problem, method, eps, sice_cfg, pg_cfg):
    if method == "sice":
        cfg = sice_cfg if sice_cfg is not None else SolverConfig(eps=eps)
        return solve(problem, cfg)
    cfg = pg_cfg if pg_cfg is not None else PgConfig(eps=eps)
    return solve_pg(problem, cfg)


def run_bench(
    spec: BenchSpec,
    rho: float = DEFAULT_BENCH_RHO,
    sice_cfg: SolverConfig | None = None,
    pg_cfg: PgConfig | None = None,
) -> list[BenchRow]:
    """Run the campaign and aggregate first-attainment medians per level.

    Each repetition draws a fresh instance (seed + rep index); all methods
    run on the same instance so rows are comparable.  Runs are sequential to
    keep wall-clock timings honest.  A level counts as attained only when
    every repetition attains it; solver failures leave all of that run's
    levels unattained and the campaign continues.
    """
    eps_run = min(spec.eps_levels)
    per_cell: dict = {}
    for n in spec.sizes:
        for rep in range(spec.reps):
            matrix = gen_synthetic(SynthConfig(n=n, seed=spec.seed + rep))
            problem = ProblemInstance(matrix, rho * np.ones((n, n)))
            for method in spec.methods:
                try:
                    result = _run_method(problem, method, eps_run, sice_cfg, pg_cfg)
                    trace = result.trace
                except (FallbackExhausted, LineSearchStalled):
                    trace = ()
                for level in spec.eps_levels:
                    rec = first_attainment(trace, level)
                    cell = per_cell.setdefault((n, method, level), [])
                    cell.append(None if rec is None else (rec.seconds, rec.iters))

    rows = []
    for n in spec.sizes:
        for method in spec.methods:
            for level in spec.eps_levels:
                cell = per_cell[(n, method, level)]
                hits = [h for h in cell if h is not None]
                attained = len(hits) == spec.reps
                seconds = statistics.median(h[0] for h in hits) if hits else None
                iters = statistics.median(h[1] for h in hits) if hits else None
                rows.append(BenchRow(n, method, level, seconds, iters, attained))
    return rows


def write_bench_csv(rows, path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(BENCH_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.n,
                    row.method,
                    f"{row.eps:.17g}",
                    "" if row.seconds_median is None else f"{row.seconds_median:.17g}",
                    "" if row.iters_median is None else f"{row.iters_median:.17g}",
                    row.attained,
                ]
            )


def _comma_list(text: str, kind):
    return tuple(kind(tok) for tok in text.split(",") if tok)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sice",
        description="Sparse inverse covariance estimation via the box-constrained log-det dual.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic covariance matrix")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--density", type=float, default=0.01)
    gen.add_argument("--tau", type=float, default=0.15)
    gen.add_argument("--shift", type=float, default=1e-4)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    solve_p = sub.add_parser("solve", help="solve one instance from a matrix file")
    solve_p.add_argument("--input", required=True)
    pen = solve_p.add_mutually_exclusive_group(required=True)
    pen.add_argument("--rho", type=float, help="uniform penalty, R = rho * ones")
    pen.add_argument("--penalty", help="penalty matrix file")
    solve_p.add_argument("--eps", type=float, default=1e-5)
    solve_p.add_argument("--method", choices=("sice", "pg"), default="sice")
    solve_p.add_argument("--max-checkpoints", type=int, default=None)
    solve_p.add_argument("--M", type=int, default=None)
    solve_p.add_argument("--kappa", type=float, default=None)
    solve_p.add_argument("--eta", type=float, default=None)
    solve_p.add_argument("--delta0", type=float, default=None)
    solve_p.add_argument("--sigma-min", type=float, default=None)
    solve_p.add_argument("--sigma-max", type=float, default=None)
    solve_p.add_argument("--trace", help="write the checkpoint trace CSV here")
    solve_p.add_argument("--out", help="write the solution matrix here")
    solve_p.set_defaults(func=cmd_solve)

    bench = sub.add_parser("bench", help="time-to-gap benchmark table")
    bench.add_argument("--sizes", required=True, help="comma-separated dimensions")
    bench.add_argument(
        "--eps-levels", required=True, help="comma-separated, strictly decreasing"
    )
    bench.add_argument("--methods", default="sice,pg")
    bench.add_argument("--reps", type=int, default=1)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--rho", type=float, default=DEFAULT_BENCH_RHO)
    bench.add_argument("--out", required=True)
    bench.set_defaults(func=cmd_bench)

    return parser


def cmd_gen(args) -> int:
    cfg = SynthConfig(
        n=args.n,
        density=args.density,
        tau=args.tau,
        sigma_shift=args.shift,
        seed=args.seed,
    )
    matrix = gen_synthetic(cfg)
    write_matrix(matrix, args.out)
    with open(str(args.out) + ".meta", "w", newline="\n") as handle:
        handle.write(metadata_line(cfg) + "\n")
    print(f"wrote {args.out} (n={cfg.n})")
    return 0


def _solver_config(args) -> SolverConfig:
    base = SolverConfig(eps=args.eps)
    overrides = {
        "m": args.M,
        "kappa": args.kappa,
        "eta": args.eta,
        "delta0": args.delta0,
        "sigma_min": args.sigma_min,
        "sigma_max": args.sigma_max,
        "max_checkpoints": args.max_checkpoints,
    }
    fields = {k: v for k, v in overrides.items() if v is not None}
    fields["eps"] = args.eps
    return SolverConfig(
        **{**{f: getattr(base, f) for f in base.__dataclass_fields__}, **fields}
    )


def cmd_solve(args) -> int:
    matrix = read_matrix(args.input)
    if args.rho is not None:
        if args.rho < 0:
            raise ValueError("--rho must be nonnegative")
        penalty = args.rho * np.ones_like(matrix)
    else:
        penalty = read_matrix(args.penalty)
    problem = ProblemInstance(matrix, penalty)

    if args.method == "sice":
        result = solve(problem, _solver_config(args))
    else:
        max_iters = args.max_checkpoints if args.max_checkpoints else 100000
        result = solve_pg(problem, PgConfig(eps=args.eps, max_iters=max_iters))

    if args.out:
        write_matrix(result.x_star, args.out)
    if args.trace:
        write_trace_csv(result.trace, args.trace)
    last = result.trace[-1]
    print(
        f"{result.status.value}, {result.final_gap:.17g}, {last.index}, {last.seconds:.6f}"
    )
    return 0


def cmd_bench(args) -> int:
    spec = BenchSpec(
        sizes=_comma_list(args.sizes, int),
        eps_levels=_comma_list(args.eps_levels, float),
        methods=_comma_list(args.methods, str),
        reps=args.reps,
        seed=args.seed,
    )
    rows = run_bench(spec, rho=args.rho)
    write_bench_csv(rows, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInstance,) as err:
        print(f"invalid instance: {err}", file=sys.stderr)
        return 3
    except (FallbackExhausted, LineSearchStalled, GenerationFailed) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 4
    except MatrixFormatError as err:
        print(f"bad matrix file: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
