import itertools

import numpy as np
import pandas as pd
import pytest

from conftest import make_instance
from utils.baselines import omp_solve, pg_lasso_full
from utils.core import FlopCounter, objective
from utils.errors import DimensionMismatchError, InvalidArgumentError
from utils.gmp import (
    check_stop,
    default_stop_rules,
    gmp_solve,
    sgmp_select,
    sgmp_solve,
    worst_case_select,
    write_trace_csv,
)
from utils.harness import default_lambda, gen_nonrip
from utils.schemas import ActiveSet, DesignMatrix, GmpConfig, SolveTrace, StopRule


def exhaustive_best_support(A: DesignMatrix, b: np.ndarray, size: int, chunk: int = 50000) -> list:
    """Support of the given size with the smallest least-squares residual, scanned in Gram form"""
    G = A.data.T @ A.data
    c = A.data.T @ b
    bb = float(b @ b)
    combos = itertools.combinations(range(A.m), size)
    best_value, best_support = np.inf, None
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        Q = G[block[:, :, None], block[:, None, :]]
        cs = c[block]
        coef = np.linalg.solve(Q, cs[..., None])[..., 0]
        values = bb - np.einsum("ij,ij->i", cs, coef)
        i = int(np.argmin(values))
        if values[i] < best_value:
            best_value, best_support = float(values[i]), sorted(block[i].tolist())
    return best_support


class TestWorstCaseSelect:
    def test_sorted_by_magnitude(self):
        assert worst_case_select(np.array([5.0, -7.0, 1.0]), [], 2, 0.0) == [1, 0]

    def test_no_violators(self):
        assert worst_case_select(np.array([0.5, -0.3]), [], 2, 1.0) == []

    def test_ties_lowest_index(self):
        assert worst_case_select(np.array([2.0, 1.0, -2.0]), [], 1, 0.0) == [0]

    def test_excluded_atoms_skipped(self):
        assert worst_case_select(np.array([9.0, 1.0, 3.0]), [0], 2, 0.0) == [2, 1]

    def test_rejects_rho_zero(self):
        with pytest.raises(InvalidArgumentError):
            worst_case_select(np.ones(3), [], 0, 0.0)


class TestCheckStop:
    def test_zero_delta_fires(self):
        trace = SolveTrace(theta0=1.0)
        trace.record(1.0, 1, 1, 0.0, [0])
        decision = check_stop(trace, 1.0, np.ones(3), [StopRule.relative_delta(1e-9)])
        assert decision and decision.rule == "relative_delta"

    def test_grad_inf_boundary(self):
        decision = check_stop(SolveTrace(theta0=1.0), 1.0, np.array([0.3, -0.5]), [StopRule.grad_inf(0.5)])
        assert decision.rule == "grad_inf"

    def test_relative_delta_arithmetic(self):
        # ||b||^2 = 25, 2 * 1e-4 / 25 = 8e-6
        trace = SolveTrace(theta0=12.5)
        trace.record(12.5 - 1e-4, 1, 1, 0.0, [0])
        assert check_stop(trace, 1.0, np.ones(2), [StopRule.relative_delta(1e-5)])
        assert not check_stop(trace, 1.0, np.ones(2), [StopRule.relative_delta(1e-6)])

    def test_relative_delta_needs_history(self):
        assert not check_stop(SolveTrace(theta0=1.0), 1.0, np.ones(2), [StopRule.relative_delta(1e-3)])

    def test_or_semantics_reports_first(self):
        trace = SolveTrace(theta0=2.0)
        rules = [StopRule.residual_norm(0.1), StopRule.relative_residual(0.5)]
        decision = check_stop(trace, np.array([1.0, 0.0]), np.ones(2), rules)
        assert decision.rule == "relative_residual"

    def test_default_rules(self):
        assert [r.kind for r in default_stop_rules(GmpConfig())] == ["relative_delta"]
        assert [r.kind for r in default_stop_rules(GmpConfig(lam=0.1))] == ["relative_delta", "grad_inf"]


class TestGmpSolve:
    def test_identity_dictionary(self, identity4):
        x, trace = gmp_solve(identity4, np.array([0.0, 0.0, 1.0, 0.0]), GmpConfig())
        assert x.support.tolist() == [2]
        assert x.values[0] == pytest.approx(1.0)
        assert trace.n_outer == 1
        assert trace.objective_per_outer[-1] == pytest.approx(0.0, abs=1e-20)

    def test_zero_signal(self, identity4):
        x, trace = gmp_solve(identity4, np.zeros(4), GmpConfig())
        assert x.nnz == 0
        assert x.meta["stop_reason"] == "zero_signal"

    def test_large_lambda_gives_zero(self, rng):
        A = DesignMatrix(rng.standard_normal((10, 20)))
        b = rng.standard_normal(10)
        lam = float(np.max(np.abs(A.data.T @ b))) * 1.01
        x, _ = gmp_solve(A, b, GmpConfig(lam=lam))
        assert x.nnz == 0
        assert x.meta["stop_reason"] == "no_violators"

    def test_dimension_mismatch(self, identity4):
        with pytest.raises(DimensionMismatchError):
            gmp_solve(identity4, np.ones(5), GmpConfig())

    @pytest.mark.slow
    def test_exact_recovery_matches_exhaustive_search(self):
        recovered = 0
        for seed in range(10):
            A, x_true, b = make_instance(16, 64, 4, seed=11 + seed, kind="zero_one")
            truth = x_true.support.tolist()
            assert exhaustive_best_support(A, b, 4) == truth
            cfg = GmpConfig(rho=2, max_inner=200, inner_tol=1e-12)
            x, _ = gmp_solve(A, b, cfg, [StopRule.relative_residual(1e-24), StopRule.relative_delta(1e-14)])
            r_norm = float(np.linalg.norm(b - A.data @ x.to_dense()))
            assert r_norm <= 1e-8 * np.linalg.norm(b)
            union = sorted(set(x.meta["selection_order"]) | set(truth))
            if len(union) > A.n:
                continue
            sigma = np.linalg.svd(A.data[:, union], compute_uv=False)[-1]
            # A_U (x - x_true) = -r, so the error is at most ||r|| / sigma_min(A_U)
            err = float(np.linalg.norm(x.to_dense() - x_true.to_dense()))
            assert err <= r_norm / sigma * (1 + 1e-6) + 1e-12
            recovered += err <= 1e-6
        assert recovered >= 5

    def test_trace_monotone_and_rounds_disjoint(self):
        A, _, b = make_instance(32, 128, 8, seed=4)
        x, trace = gmp_solve(A, b, GmpConfig(rho=3))
        assert min(trace.delta_per_outer) >= -1e-12
        flat = [j for J in x.meta["rounds"] for j in J]
        assert len(flat) == len(set(flat))
        assert all(len(J) <= 3 for J in x.meta["rounds"])

    def test_capped(self):
        A, _, b = make_instance(32, 128, 12, seed=5)
        x, _ = gmp_solve(A, b, GmpConfig(rho=4, max_atoms=6), stops=[])
        assert x.meta["capped"] is True
        assert x.meta["stop_reason"] == "capped"
        assert len(x.meta["selection_order"]) == 6

    def test_flop_counter_records_correlations(self):
        A, _, b = make_instance(32, 128, 4, seed=2)
        counter = FlopCounter()
        _, trace = gmp_solve(A, b, GmpConfig(rho=2), flops=counter)
        # one pass per outer step plus the pass that fired the stop rule
        assert trace.stop_reason in ("relative_delta", "capped")
        assert counter.correlation_calls == trace.n_outer + 1
        assert counter.correlation >= 2 * 32 * 128 * counter.correlation_calls

    def test_write_trace_csv(self, tmp_path):
        A, _, b = make_instance(16, 48, 3, seed=1)
        _, trace = gmp_solve(A, b, GmpConfig(rho=2))
        path = write_trace_csv(trace, tmp_path / "trace.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["outer_iter", "objective", "delta", "support_size", "inner_iters", "wall_ms"]
        assert len(frame) == trace.n_outer


@pytest.mark.parametrize("seed", range(50))
def test_omp_equivalence(seed):
    A, _, b = make_instance(64, 256, 6, seed=1000 + seed)
    cfg = GmpConfig(rho=1, max_atoms=6, max_inner=500, inner_tol=1e-12)
    x_gmp, _ = gmp_solve(A, b, cfg, stops=[])
    x_omp = omp_solve(A, b, k=6)
    assert x_gmp.meta["selection_order"] == x_omp.meta["selection_order"]
    np.testing.assert_allclose(x_gmp.to_dense(), x_omp.to_dense(), atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_convex_optimum_and_kkt(seed):
    A, _, b = make_instance(64, 256, 8, seed=2000 + seed)
    lam = default_lambda(A, b)
    cfg = GmpConfig(rho=4, lam=lam, max_inner=2000, inner_tol=1e-9 * lam)
    x, _ = gmp_solve(A, b, cfg, stops=[StopRule.grad_inf(lam * (1 + 1e-5))])
    ref = pg_lasso_full(A, b, lam, tol=1e-9 * lam, max_iter=200000)

    f_gmp = objective(A, b, x, lam)
    f_ref = objective(A, b, ref, lam)
    assert f_gmp == pytest.approx(f_ref, rel=1e-6)

    xi = b - A.data @ x.to_dense()
    corr = A.data.T @ xi
    assert np.max(np.abs(corr)) <= lam * (1 + 1e-4)
    strong = np.abs(x.values) > 1e-8
    on_support = corr[x.support[strong]] - lam * np.sign(x.values[strong])
    assert np.max(np.abs(on_support), initial=0.0) <= 1e-4 * lam


@pytest.mark.parametrize("solve", [gmp_solve, sgmp_solve])
def test_nonrip_global_solution(solve):
    A, _, b = gen_nonrip(128, 512, 16, seed=0)
    cfg = GmpConfig(rho=6, omega=4 if solve is sgmp_solve else 1)
    x, trace = solve(A, b, cfg)
    r = b - A.data @ x.to_dense()
    assert float(r @ r) <= 1e-6 * float(b @ b)
    assert trace.stop_reason == "relative_delta"
    assert min(trace.delta_per_outer) >= -1e-12


def test_first_step_bound():
    for seed in range(20):
        A, _, b = make_instance(64, 256, 8, seed=3000 + seed)
        lam = default_lambda(A, b)
        _, trace = gmp_solve(A, b, GmpConfig(rho=3, lam=lam))
        assert trace.first_step_decrease
        for decrease, bound in zip(trace.first_step_decrease, trace.first_step_bound):
            assert decrease >= bound - 1e-9


class TestSgmp:
    def test_omega_one_matches_gmp(self):
        A, _, b = make_instance(32, 128, 5, seed=9)
        x1, t1 = gmp_solve(A, b, GmpConfig(rho=2))
        x2, t2 = sgmp_solve(A, b, GmpConfig(rho=2, omega=1))
        assert t1.objective_per_outer == t2.objective_per_outer
        assert x1.meta["selection_order"] == x2.meta["selection_order"]

    def test_select_within_top_candidates(self):
        A, _, b = make_instance(32, 128, 6, seed=21)
        g = A.data.T @ b
        chosen = sgmp_select(A, b, ActiveSet(), g, GmpConfig(rho=4, omega=4), np.empty(0))
        top16 = set(np.argsort(-np.abs(g), kind="stable")[:16].tolist())
        assert 1 <= len(chosen) <= 4
        assert set(chosen) <= top16

    def test_select_single_nonzero_candidate(self):
        # only atom 1 explains b, so the exploratory solve zeros the others
        A = DesignMatrix(np.eye(4)[:, [0, 1, 2, 3]])
        b = np.array([0.0, 3.0, 0.0, 0.0])
        g = np.array([0.5, 3.0, 0.4, 0.3])
        chosen = sgmp_select(A, b, ActiveSet(), g, GmpConfig(rho=1, omega=4, max_inner=50), np.empty(0))
        assert chosen == [1]

    def test_omega_one_select_is_worst_case(self):
        A, _, b = make_instance(32, 128, 6, seed=22)
        g = A.data.T @ b
        cfg = GmpConfig(rho=3, omega=1)
        assert sgmp_select(A, b, ActiveSet(), g, cfg, np.empty(0)) == worst_case_select(g, [], 3, 0.0)

    def test_every_step_not_worse_than_gmp_for_most_seeds(self):
        wins = 0
        for seed in range(20):
            A, _, b = make_instance(64, 256, 12, seed=4000 + seed)
            _, t_gmp = gmp_solve(A, b, GmpConfig(rho=3, max_atoms=24), stops=[])
            _, t_sgmp = sgmp_solve(A, b, GmpConfig(rho=3, omega=4, max_atoms=24), stops=[])
            steps = min(t_gmp.n_outer, t_sgmp.n_outer)
            # inner solves stop at a 1e-6 gradient, so near-zero objectives carry that much noise
            slack = 1e-9 * t_gmp.theta0
            paired = zip(t_sgmp.objective_per_outer[:steps], t_gmp.objective_per_outer[:steps])
            if all(f_sgmp <= f_gmp + slack for f_sgmp, f_gmp in paired):
                wins += 1
        assert wins >= 11
