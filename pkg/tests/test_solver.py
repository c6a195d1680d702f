import numpy as np
import pytest

from sice.linalg import NotPositiveDefinite
from sice.objective import DualIterate, ProblemInstance
from sice.solver import (
    EvalCounter,
    FallbackExhausted,
    SolverConfig,
    Status,
    StepState,
    check_optimality,
    descent_check,
    enforce_posdef,
    inner_loop,
    mbb_sigma,
    solve,
)
from tests.conftest import random_instance


def make_state(u_prev, u_prev2, grad_prev, grad_prev2, formula="a"):
    return StepState(
        u_prev=np.asarray(u_prev, dtype=float),
        u_prev2=np.asarray(u_prev2, dtype=float),
        grad_prev=np.asarray(grad_prev, dtype=float),
        grad_prev2=np.asarray(grad_prev2, dtype=float),
        next_formula=formula,
    )


def fake_iterate(u, grad, value):
    u = np.asarray(u, dtype=float)
    grad = np.asarray(grad, dtype=float)
    return DualIterate(u=u, factor=None, x=-grad, grad=grad, value=value)


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"m": 0},
            {"kappa": 0.0},
            {"kappa": 1.0},
            {"eta": 1.0},
            {"delta0": 0.0},
            {"sigma_min": 0.0},
            {"sigma_min": 2.0, "sigma_max": 1.0},
            {"eps": 0.0},
            {"max_checkpoints": 0},
            {"fallback_max_halvings": 0},
        ],
    )
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)


class TestMbbSigma:
    def test_both_formulas_on_clean_differences(self):
        # s = I, y = 2I: formula a gives 2/4, formula b gives 4/8.
        state = make_state(np.eye(2), np.zeros((2, 2)), 2 * np.eye(2), np.zeros((2, 2)))
        cfg = SolverConfig(sigma_min=1e-8, sigma_max=1e8)
        none_binding = np.zeros((2, 2), dtype=bool)
        assert mbb_sigma(state, none_binding, "a", cfg) == 0.5
        assert mbb_sigma(state, none_binding, "b", cfg) == 0.5

    def test_negative_curvature_gives_sigma_max(self):
        state = make_state(np.eye(2), np.zeros((2, 2)), -np.eye(2), np.zeros((2, 2)))
        cfg = SolverConfig()
        mask = np.zeros((2, 2), dtype=bool)
        assert mbb_sigma(state, mask, "a", cfg) == cfg.sigma_max
        assert mbb_sigma(state, mask, "b", cfg) == cfg.sigma_max

    def test_clamped_to_sigma_max(self):
        state = make_state(
            1e6 * np.eye(2), np.zeros((2, 2)), 1e-6 * np.eye(2), np.zeros((2, 2))
        )
        cfg = SolverConfig(sigma_min=1e-8, sigma_max=1e8)
        mask = np.zeros((2, 2), dtype=bool)
        # raw ratio is 2e12 / 2 = 1e12
        assert mbb_sigma(state, mask, "a", cfg) == 1e8

    def test_clamped_to_sigma_min(self):
        state = make_state(
            1e-6 * np.eye(2), np.zeros((2, 2)), 1e6 * np.eye(2), np.zeros((2, 2))
        )
        cfg = SolverConfig(sigma_min=1e-8, sigma_max=1e8)
        mask = np.zeros((2, 2), dtype=bool)
        # formula b: curvature 2 over ||y||^2 = 2e12, clamped up from 1e-12
        assert mbb_sigma(state, mask, "b", cfg) == 1e-8

    def test_binding_coordinates_are_masked_out(self):
        # Only the (0,0) coordinate carries curvature; once it binds the
        # differences vanish and the coefficient degrades to sigma_max.
        s = np.diag([1.0, 0.0])
        y = np.diag([2.0, 0.0])
        state = make_state(s, np.zeros((2, 2)), y, np.zeros((2, 2)))
        cfg = SolverConfig()
        no_mask = np.zeros((2, 2), dtype=bool)
        assert mbb_sigma(state, no_mask, "a", cfg) == 0.5
        mask = np.zeros((2, 2), dtype=bool)
        mask[0, 0] = True
        assert mbb_sigma(state, mask, "a", cfg) == cfg.sigma_max

    def test_no_history_gives_clamped_unit_step(self):
        cfg = SolverConfig()
        assert mbb_sigma(None, np.zeros((1, 1), dtype=bool), "a", cfg) == 1.0
        tight = SolverConfig(sigma_min=1e-8, sigma_max=0.25)
        assert mbb_sigma(None, np.zeros((1, 1), dtype=bool), "a", tight) == 0.25


class TestInnerLoop:
    def scalar_setup(self):
        problem = ProblemInstance(np.array([[2.0]]), np.array([[1.0]]))
        start = DualIterate.evaluate(problem, np.array([[0.0]]))
        state = StepState(
            u_prev=start.u,
            u_prev2=start.u,
            grad_prev=start.grad,
            grad_prev2=start.grad,
        )
        # Pin sigma to 1 so steps follow u <- min(1, u + 1/(2+u)).
        cfg = SolverConfig(sigma_min=1.0, sigma_max=1.0, m=1)
        return problem, start, state, cfg

    def test_scalar_recursion_converges_to_bound(self):
        problem, cur, state, cfg = self.scalar_setup()
        seen = []
        for _ in range(4):
            block = inner_loop(problem, cur, state, 1.0, cfg)
            assert block.failed_at is None
            cur, state = block.end, block.state
            seen.append(cur.u[0, 0])
        assert seen[0] == pytest.approx(0.5)
        assert seen[1] == pytest.approx(0.9)
        assert seen[2] == 1.0  # projection lands exactly on the bound
        assert seen[3] == 1.0
        assert seen == sorted(seen)

    def test_m_steps_exactly(self):
        problem, start, state, _ = self.scalar_setup()
        cfg = SolverConfig(sigma_min=1.0, sigma_max=1.0, m=3)
        counter = EvalCounter()
        block = inner_loop(problem, start, state, 1.0, cfg, counter)
        assert len(block.sigmas) == 3
        assert counter.n_grad_evals == 3

    def test_one_gradient_eval_per_step(self):
        rng = np.random.default_rng(3)
        problem = random_instance(rng, 5)
        start = DualIterate.evaluate(problem, np.diag(np.diag(problem.r)))
        state = StepState(
            u_prev=start.u,
            u_prev2=start.u,
            grad_prev=start.grad,
            grad_prev2=start.grad,
        )
        cfg = SolverConfig(m=7)
        counter = EvalCounter()
        block = inner_loop(problem, start, state, 1.0, cfg, counter)
        assert counter.n_grad_evals == 7
        assert counter.n_cholesky == 7

    def test_formulas_alternate_within_block(self):
        problem, start, state, _ = self.scalar_setup()
        cfg = SolverConfig(sigma_min=1.0, sigma_max=1.0, m=6)
        block = inner_loop(problem, start, state, 1.0, cfg)
        assert block.formulas == ("a", "b", "a", "b", "a", "b")
        assert block.state.next_formula == "a"

    def test_posdef_failure_reports_step_index(self):
        # A pinned huge coefficient overshoots the off-diagonal far enough
        # to leave the cone on the very first step.
        s = np.array([[1.0, 0.3], [0.3, 1.0]])
        r = np.array([[0.05, 5.0], [5.0, 0.05]])
        problem = ProblemInstance(s, r)
        start = DualIterate.evaluate(problem, np.diag(np.diag(r)))
        state = StepState(
            u_prev=start.u,
            u_prev2=start.u,
            grad_prev=start.grad,
            grad_prev2=start.grad,
        )
        cfg = SolverConfig(sigma_min=5000.0, sigma_max=5000.0)
        block = inner_loop(problem, start, state, 1.0, cfg)
        assert block.failed_at == 0
        assert block.failed_candidate is not None
        assert np.all(np.abs(block.failed_candidate) <= r)
        with pytest.raises(NotPositiveDefinite):
            DualIterate.evaluate(problem, block.failed_candidate)


class TestDescentCheck:
    def test_stationary_block_passes(self):
        it = fake_iterate([[0.5]], [[-0.2]], 1.23)
        assert descent_check(None, it, it, kappa=0.5)

    def test_sufficient_drop_passes(self):
        start = fake_iterate([[1.0]], [[0.5]], 1.0)
        end = fake_iterate([[0.0]], [[0.4]], 0.0)
        # drop = 1.0, predicted inner product = 0.5, kappa tiny
        assert descent_check(None, start, end, kappa=1e-4)

    def test_increase_fails(self):
        start = fake_iterate([[1.0]], [[0.5]], 0.0)
        end = fake_iterate([[0.0]], [[0.4]], 0.1)
        # drop = -0.1 against predicted 0.5 at kappa = 0.1
        assert not descent_check(None, start, end, kappa=0.1)


class TestEnforcePosdef:
    def test_scalar_bisection(self):
        problem = ProblemInstance(np.array([[1.0]]), np.array([[3.0]]))
        anchor = DualIterate.evaluate(problem, np.array([[0.0]]))
        bad = np.array([[-2.0]])
        counter = EvalCounter()
        repaired, halvings = enforce_posdef(
            problem, anchor, bad, SolverConfig(), counter
        )
        # halving once gives -1 (singular), twice gives -0.5 (posdef)
        assert halvings == 2
        assert repaired.u[0, 0] == -0.5
        assert counter.failed == 1
        assert counter.n_grad_evals == 1

    def test_moves_strictly_toward_anchor(self):
        problem = ProblemInstance(np.array([[1.0]]), np.array([[3.0]]))
        anchor = DualIterate.evaluate(problem, np.array([[0.5]]))
        repaired, _ = enforce_posdef(problem, anchor, np.array([[-2.0]]), SolverConfig())
        assert repaired.u[0, 0] != anchor.u[0, 0]
        assert -1.0 < repaired.u[0, 0] < 0.5

    def test_corrupt_anchor_exhausts(self):
        problem = ProblemInstance(np.array([[1.0]]), np.array([[9.0]]))
        corrupt = fake_iterate([[-5.0]], [[0.0]], 0.0)
        with pytest.raises(FallbackExhausted):
            enforce_posdef(problem, corrupt, np.array([[-6.0]]), SolverConfig())


class TestSolve:
    def test_scalar_closed_form(self):
        problem = ProblemInstance(np.array([[2.0]]), np.array([[1.0]]))
        result = solve(problem, SolverConfig(eps=1e-10))
        assert result.status is Status.CONVERGED
        assert result.u_star[0, 0] == pytest.approx(1.0, abs=1e-8)
        assert result.x_star[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-8)
        assert result.final_gap < 1e-10

    def test_diagonal_closed_form(self):
        problem = ProblemInstance(np.diag([2.0, 3.0, 5.0]), 0.5 * np.ones((3, 3)))
        result = solve(problem, SolverConfig(eps=1e-10))
        assert result.status is Status.CONVERGED
        expected = np.diag([1 / 2.5, 1 / 3.5, 1 / 5.5])
        assert np.max(np.abs(result.x_star - expected)) < 1e-6
        assert np.max(np.abs(result.u_star - np.diag([0.5, 0.5, 0.5]))) < 1e-8

    def test_diagonal_regression_within_50_checkpoints(self):
        problem = ProblemInstance(np.diag([2.0, 3.0, 5.0]), 0.5 * np.ones((3, 3)))
        result = solve(problem, SolverConfig(eps=1e-10))
        hit = next(rec for rec in result.trace if rec.gap < 1e-10)
        assert hit.index <= 50

    def test_tiny_diagonal_penalty_closed_form(self):
        problem = ProblemInstance(np.eye(2), 1e-6 * np.eye(2))
        result = solve(problem, SolverConfig(eps=1e-12))
        assert result.status is Status.CONVERGED
        assert np.allclose(result.u_star, 1e-6 * np.eye(2))
        assert np.allclose(result.x_star, np.diag([1 / (1 + 1e-6)] * 2), atol=1e-12)

    def test_general_instance_converges(self, rng):
        problem = random_instance(rng, 8)
        result = solve(problem, SolverConfig(eps=1e-9))
        assert result.status is Status.CONVERGED
        assert result.final_gap < 1e-9
        # X* is the gradient-recovered primal point at U*.
        it = DualIterate.evaluate(problem, result.u_star)
        assert np.max(np.abs(result.x_star - it.x)) == 0.0

    def test_invalid_instance_rejected_at_construction(self):
        from sice.objective import InvalidInstance

        with pytest.raises(InvalidInstance):
            ProblemInstance(np.array([[-2.0]]), np.array([[1.0]]))

    def test_budget_exhausted_status(self):
        # Pinned huge sigma keeps the iterates oscillating, so the budget runs out.
        s = np.array([[1.0, 0.3], [0.3, 1.0]])
        r = np.array([[0.05, 5.0], [5.0, 0.05]])
        problem = ProblemInstance(s, r)
        cfg = SolverConfig(
            eps=1e-14, sigma_min=5000.0, sigma_max=5000.0, max_checkpoints=2
        )
        result = solve(problem, cfg)
        assert result.status is Status.BUDGET_EXHAUSTED
        assert result.trace[-1].index == 2


@pytest.fixture(scope="module")
def run():
    rng = np.random.default_rng(11)
    problem = random_instance(rng, 10)
    cfg = SolverConfig(eps=1e-11)
    return problem, cfg, solve(problem, cfg)


class TestTraceInvariants:

    def test_sigma_within_safeguards(self, run):
        _, cfg, result = run
        for rec in result.trace:
            assert cfg.sigma_min <= rec.sigma_last <= cfg.sigma_max

    def test_scaled_step_inherits_safeguard_bounds(self, run):
        _, cfg, result = run
        for rec in result.trace:
            assert cfg.sigma_min * rec.delta <= rec.sigma_last * rec.delta
            assert rec.sigma_last * rec.delta <= cfg.sigma_max * rec.delta

    def test_delta_nonincreasing_by_eta_ratios(self, run):
        _, cfg, result = run
        deltas = [rec.delta for rec in result.trace]
        for prev, cur in zip(deltas, deltas[1:]):
            assert cur <= prev
            ratio = cur / prev
            assert ratio == 1.0 or ratio == pytest.approx(cfg.eta, rel=1e-12)

    def test_delta_changes_at_most_once_per_checkpoint(self, run):
        _, cfg, result = run
        deltas = [rec.delta for rec in result.trace]
        for prev, cur in zip(deltas, deltas[1:]):
            # One eta at most: never eta^2 or smaller within one checkpoint.
            assert cur / prev > cfg.eta * cfg.eta

    def test_formula_alternation_across_blocks(self, run):
        _, _, result = run
        sequence = [f for rec in result.trace for f in rec.formulas]
        expected = ["a", "b"] * (len(sequence) // 2 + 1)
        assert sequence == expected[: len(sequence)]

    def test_checkpoint_indices_strictly_increasing(self, run):
        _, _, result = run
        indices = [rec.index for rec in result.trace]
        assert indices == sorted(set(indices))
        assert all(np.isfinite(rec.gap) for rec in result.trace)

    def test_box_feasibility_of_solution(self, run):
        problem, _, result = run
        assert np.all(np.abs(result.u_star) <= problem.r)

    def test_one_gradient_evaluation_per_iterate(self, run):
        _, _, result = run
        assert result.n_grad_evals == 2 + result.trace[-1].iters
        assert result.n_cholesky == result.n_grad_evals + result.n_fallback_probes

    def test_converged_implies_gap_below_eps(self, run):
        _, cfg, result = run
        assert result.status is Status.CONVERGED
        assert result.final_gap < cfg.eps


class TestFallbackIntegration:
    def test_forced_overshoot_repairs_and_continues(self):
        s = np.array([[1.0, 0.3], [0.3, 1.0]])
        r = np.array([[0.05, 5.0], [5.0, 0.05]])
        problem = ProblemInstance(s, r)
        cfg = SolverConfig(
            eps=1e-14, sigma_min=5000.0, sigma_max=5000.0, max_checkpoints=6
        )
        result = solve(problem, cfg)
        repaired_rows = [rec for rec in result.trace if rec.fallback_halvings > 0]
        assert repaired_rows, "expected the posdef fallback to trigger"
        assert np.all(np.abs(result.u_star) <= r)
        assert result.n_fallback_probes > 0
        assert result.n_cholesky == result.n_grad_evals + result.n_fallback_probes
        # Every checkpoint iterate remained factorizable.
        assert all(np.isfinite(rec.dual_value) for rec in result.trace)


class TestCheckOptimality:
    def test_scalar_residuals(self):
        problem = ProblemInstance(np.array([[2.0]]), np.array([[1.0]]))
        result = solve(problem, SolverConfig(eps=1e-10))
        res_inv, res_comp = check_optimality(problem, result)
        assert res_inv <= 1e-10
        assert res_comp <= 1e-10

    def test_complementarity_matches_gap(self, rng):
        problem = random_instance(rng, 7)
        result = solve(problem, SolverConfig(eps=1e-9))
        _, res_comp = check_optimality(problem, result)
        assert res_comp <= result.final_gap + 1e-10
