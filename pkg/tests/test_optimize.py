"""Solver and oracle checks for the window-release tradeoff.

The simplex oracle is validated first (hand LPs, then the closed-form
optimum it must reproduce); the iterative solver is then held to the
oracle's objective on random instances.
"""

import math

import numpy as np
import pytest

from sipstream._simplex import SimplexError, solve_lp
from sipstream.mech import crr_policy
from sipstream.model import BatchModel, MarkovModel
from sipstream.optimize import (
    BatchObjective,
    batch_distance,
    check_feasibility,
    exact_oracle_small,
    objective_value,
    solve_batch_policy,
    symbol_distance,
)

from test_model import binary_model

HAMMING2 = batch_distance("hamming", 2, 2)


def random_instance(rng, eps):
    p1 = rng.uniform(0.05, 0.95)
    q = rng.uniform(0.55, 0.95)
    bm = BatchModel(base=binary_model(p1, q), width=2)
    return BatchObjective(distance=HAMMING2, belief=bm.batch_prior(), epsilon=eps)


class TestSimplex:
    def test_hand_lp(self):
        # min -x - 2y s.t. x + y <= 4, x <= 3, y <= 2 -> (2... ) optimum (3? )
        x, obj = solve_lp(
            c=[-1.0, -2.0],
            A_ub=[[1, 1], [1, 0], [0, 1]],
            b_ub=[4, 3, 2],
        )
        assert obj == pytest.approx(-6.0, abs=1e-9)
        assert np.allclose(x, [2, 2], atol=1e-9)

    def test_equality_constraint(self):
        x, obj = solve_lp(c=[1.0, 2.0, 3.0], A_eq=[[1, 1, 1]], b_eq=[1.0])
        assert obj == pytest.approx(1.0)
        assert np.allclose(x, [1, 0, 0], atol=1e-12)

    def test_infeasible_detected(self):
        with pytest.raises(SimplexError):
            solve_lp(c=[1.0], A_eq=[[1.0]], b_eq=[2.0], A_ub=[[1.0]], b_ub=[1.0])

    def test_unbounded_detected(self):
        with pytest.raises(SimplexError):
            solve_lp(c=[-1.0, 0.0], A_ub=[[0.0, 1.0]], b_ub=[1.0])

    def test_degenerate_zero_rhs(self):
        # heavy degeneracy like the band constraints: x - y <= 0, y - x <= 0
        x, obj = solve_lp(
            c=[1.0, 2.0],
            A_eq=[[1, 1]],
            b_eq=[1.0],
            A_ub=[[1, -1], [-1, 1]],
            b_ub=[0.0, 0.0],
        )
        assert np.allclose(x, [0.5, 0.5], atol=1e-9)
        assert obj == pytest.approx(1.5)


class TestDistances:
    def test_kinds(self):
        assert np.array_equal(symbol_distance("hamming", 3), 1 - np.eye(3))
        assert symbol_distance("absolute", 3)[0, 2] == 2
        assert symbol_distance("squared", 3)[0, 2] == 4
        d = symbol_distance("indicator-bucket", 4, buckets=[0, 0, 1, 1])
        assert d[0, 1] == 0 and d[1, 2] == 1

    def test_batch_distance_sums_positions(self):
        d = batch_distance("hamming", 2, 2)
        assert d[0, 3] == 2  # (0,0) vs (1,1)
        assert d[1, 3] == 1  # (0,1) vs (1,1)

    def test_objective_validates_metric(self):
        bad = np.array([[0.0, 1.0], [2.0, 0.0]])  # asymmetric
        with pytest.raises(ValueError):
            BatchObjective(distance=bad, belief=[0.5, 0.5], epsilon=1.0)
        with pytest.raises(ValueError):
            BatchObjective(distance=np.eye(2), belief=[0.5, 0.5], epsilon=1.0)


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        obj = random_instance(rng, 1.0)
        grad = obj.gradient()
        K = np.full((4, 4), 0.25)
        h = 1e-6
        for o in range(4):
            for r in range(4):
                Kp, Km = K.copy(), K.copy()
                Kp[o, r] += h
                Km[o, r] -= h
                fd = (objective_value(obj, Kp) - objective_value(obj, Km)) / (2 * h)
                denom = max(abs(fd), 1e-12)
                assert abs(fd - grad[o, r]) / denom < 1e-6


class TestOracle:
    @pytest.mark.parametrize("belief,eps", [([0.4, 0.6], 1.0), ([0.5, 0.5], math.log(2))])
    def test_reproduces_closed_form_at_width_one(self, belief, eps):
        # the closed-form optimum applies when every belief entry clears
        # 1/(e^eps + 1)
        obj = BatchObjective(distance=batch_distance("hamming", 2, 1), belief=belief, epsilon=eps)
        policy, value = exact_oracle_small(obj)
        crr = crr_policy(np.asarray(belief), eps)
        assert abs(value - objective_value(obj, crr.kernel)) < 1e-9
        assert np.max(np.abs(policy.kernel - crr.kernel)) < 1e-7

    def test_zero_budget_optimum_is_input_independent(self):
        obj = BatchObjective(distance=HAMMING2, belief=[0.7, 0.1, 0.1, 0.1], epsilon=0.0)
        policy, value = exact_oracle_small(obj)
        # all rows identical (ratio-1 constraint) ...
        assert np.max(np.abs(policy.kernel - policy.kernel[0][None, :])) < 1e-9
        # ... and no costlier than sampling the belief itself
        belief_rows = np.tile(obj.belief, (4, 1))
        assert value <= objective_value(obj, belief_rows) + 1e-12
        assert value == pytest.approx(float((obj.gradient().sum(axis=0)).min()), abs=1e-9)

    def test_oracle_never_loses_to_solver(self):
        rng = np.random.default_rng(8)
        for eps in (0.5, 1.0):
            obj = random_instance(rng, eps)
            _, oval = exact_oracle_small(obj)
            _, info = solve_batch_policy(obj)
            assert oval <= info.objective + 1e-9

    def test_size_limit(self):
        with pytest.raises(ValueError, match="limited"):
            exact_oracle_small(
                BatchObjective(
                    distance=batch_distance("hamming", 3, 2),
                    belief=np.full(9, 1 / 9),
                    epsilon=1.0,
                )
            )


class TestSolver:
    def test_unbounded_budget_returns_identity(self):
        obj = BatchObjective(distance=HAMMING2, belief=[0.09, 0.01, 0.09, 0.81], epsilon=50.0)
        policy, info = solve_batch_policy(obj)
        assert info.objective < 1e-6
        assert np.max(np.abs(policy.kernel - np.eye(4))) < 1e-4

    def test_zero_budget_input_independent(self):
        obj = BatchObjective(distance=HAMMING2, belief=[0.09, 0.01, 0.09, 0.81], epsilon=0.0)
        policy, info = solve_batch_policy(obj)
        assert np.max(np.abs(policy.kernel - policy.kernel[0][None, :])) < 1e-12
        assert check_feasibility(policy.kernel, obj.belief, 0.0).feasible
        _, oval = exact_oracle_small(obj)
        assert info.objective == pytest.approx(oval, abs=1e-9)

    def test_case2_belief_matches_oracle_within_one_percent(self):
        bm = BatchModel(base=binary_model(0.9, 0.9), width=2)
        obj = BatchObjective(distance=HAMMING2, belief=bm.batch_prior(), epsilon=1.0)
        policy, info = solve_batch_policy(obj)
        _, oval = exact_oracle_small(obj)
        assert info.objective <= 1.01 * oval
        assert check_feasibility(policy.kernel, obj.belief, 1.0).feasible

    def test_width_one_converges_to_closed_form(self):
        obj = BatchObjective(distance=batch_distance("hamming", 2, 1), belief=[0.45, 0.55], epsilon=1.0)
        policy, _ = solve_batch_policy(obj)
        crr = crr_policy(np.array([0.45, 0.55]), 1.0)
        assert np.max(np.abs(policy.kernel - crr.kernel)) < 1e-4

    def test_monotone_descent_of_recorded_trace(self, tmp_path):
        trace = tmp_path / "trace.csv"
        obj = random_instance(np.random.default_rng(4), 1.0)
        solve_batch_policy(obj, trace_path=trace)
        lines = trace.read_text().strip().splitlines()
        assert lines[0] == "iteration,objective,worst_log_ratio"
        assert len(lines) > 2

    def test_rows_always_stochastic(self):
        rng = np.random.default_rng(10)
        for eps in (0.3, 1.0, 3.0):
            policy, _ = solve_batch_policy(random_instance(rng, eps))
            assert np.allclose(policy.kernel.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(policy.kernel >= 0)

    def test_zero_belief_rows_carry_output_marginal(self):
        obj = BatchObjective(distance=HAMMING2, belief=[0.5, 0.5, 0.0, 0.0], epsilon=0.8)
        policy, _ = solve_batch_policy(obj)
        marginal = np.asarray(obj.belief) @ policy.kernel
        for o in (2, 3):
            assert np.allclose(policy.kernel[o], marginal / marginal.sum(), atol=1e-9)


class TestFeasibilityReport:
    def test_uniform_kernel_all_ratios_one(self):
        report = check_feasibility(np.full((4, 4), 0.25), np.array([0.1, 0.2, 0.3, 0.4]), 0.0)
        assert report.feasible
        assert report.worst_log_ratio == pytest.approx(0.0, abs=1e-12)

    def test_identity_kernel_violates_at_diagonal(self):
        belief = np.array([0.25, 0.75])
        report = check_feasibility(np.eye(2), belief, 0.5)
        assert not report.feasible
        assert any(o == r for o, r, _ in report.violations)
        # the off-diagonal zeros are zero-posterior entries: unbounded ratio
        assert report.worst_log_ratio == math.inf

    def test_solver_output_feasible(self):
        rng = np.random.default_rng(12)
        obj = random_instance(rng, 0.5)
        policy, _ = solve_batch_policy(obj)
        assert check_feasibility(policy.kernel, obj.belief, 0.5).feasible

    def test_zero_marginal_columns_skipped(self):
        kernel = np.array([[1.0, 0.0], [1.0, 0.0]])
        report = check_feasibility(kernel, np.array([0.5, 0.5]), 0.1)
        assert report.feasible  # the dropped column is never released


class TestAcceptanceShape:
    """Random-instance comparison mirroring the solver optimality gate."""

    def test_thirty_random_instances(self):
        rng = np.random.default_rng(2024)
        for trial in range(30):
            eps = (0.5, 1.0, 2.0)[trial % 3]
            obj = random_instance(rng, eps)
            policy, info = solve_batch_policy(obj)
            _, oval = exact_oracle_small(obj)
            assert info.objective <= 1.01 * oval + 1e-12, (trial, info.objective, oval)
            report = check_feasibility(policy.kernel, obj.belief, eps, tol=1e-6)
            assert report.feasible, (trial, report.violations[:3])
