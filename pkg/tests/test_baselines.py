import numpy as np
import pytest

from conftest import make_instance
from utils.baselines import (
    L2Predictor,
    RidgePredictor,
    adaptive_eta,
    l2_fit,
    l2l2_fit,
    niht_solve,
    omp_solve,
    ompr_solve,
    pg_lasso_full,
    sp_solve,
)
from utils.errors import InvalidArgumentError
from utils.schemas import BaselineConfig, DesignMatrix, StopRule


def recovered(x, x_true, tol=1e-6) -> bool:
    err = np.linalg.norm(x.to_dense() - x_true.to_dense())
    return err <= tol * np.linalg.norm(x_true.values)


class TestOmp:
    def test_orthonormal_stops_on_zero_correlation(self, identity4):
        x = omp_solve(identity4, np.array([1.0, 0.0, 2.0, 0.0]), k=4)
        assert x.meta["selection_order"] == [2, 0]
        assert x.meta["stop_reason"] == "zero_correlation"
        np.testing.assert_allclose(x.to_dense(), [1.0, 0.0, 2.0, 0.0])

    def test_budget(self, small_instance):
        A, _, b = small_instance
        x = omp_solve(A, b, k=2)
        assert len(x.meta["selection_order"]) == 2
        assert x.meta["stop_reason"] == "budget"

    def test_stop_rule(self, small_instance):
        A, _, b = small_instance
        x = omp_solve(A, b, k=30, stops=[StopRule.relative_residual(0.99)])
        assert x.meta["stop_reason"] == "relative_residual"

    def test_recovers_easy_instance(self):
        A, x_true, b = make_instance(64, 256, 4, seed=8)
        assert recovered(omp_solve(A, b, k=4), x_true)

    def test_rejects_bad_k(self, identity4):
        with pytest.raises(InvalidArgumentError):
            omp_solve(identity4, np.ones(4), k=0)


class TestSubspacePursuit:
    def test_recovers_most_easy_instances(self):
        hits = 0
        for seed in range(5):
            A, x_true, b = make_instance(64, 256, 5, seed=70 + seed)
            hits += recovered(sp_solve(A, b, 5), x_true)
        assert hits >= 4

    def test_support_size_bounded(self, small_instance):
        A, _, b = small_instance
        x = sp_solve(A, b, 6)
        assert x.nnz <= 6
        assert x.meta["solver"] == "sp"

    def test_rejects_k_hat_above_n(self, rng):
        A = DesignMatrix(rng.standard_normal((5, 20)))
        with pytest.raises(InvalidArgumentError):
            sp_solve(A, rng.standard_normal(5), 6)


class TestOmpr:
    def test_adaptive_eta_identity(self, identity4):
        g = np.array([1.0, -2.0, 0.5, 3.0])
        assert adaptive_eta(identity4, g, np.array([0, 1])) == pytest.approx(1.0)
        assert adaptive_eta(identity4, np.zeros(4), np.array([0, 1])) == 0.0

    def test_adaptive_eta_scaled_columns(self):
        A = DesignMatrix(2.0 * np.eye(3))
        assert adaptive_eta(A, np.array([1.0, 1.0, 0.0]), np.array([0, 1])) == pytest.approx(0.25)

    def test_adaptive_step_beats_fixed_step_on_poorly_scaled_columns(self):
        wins = 0
        for seed in range(20):
            A, x_true, _ = make_instance(64, 256, 8, seed=700 + seed)
            scales = 10.0 ** np.random.default_rng(seed).uniform(-2.0, 2.0, A.m)
            A = DesignMatrix(A.data * scales)
            b = A.data @ x_true.to_dense()
            fixed = ompr_solve(A, b, 10, BaselineConfig(eta=0.7))
            adaptive = ompr_solve(A, b, 10, BaselineConfig(eta=0.7, adaptive_eta=True))
            r_fixed = np.linalg.norm(b - A.data @ fixed.to_dense())
            r_adaptive = np.linalg.norm(b - A.data @ adaptive.to_dense())
            wins += r_adaptive <= r_fixed + 1e-12 * np.linalg.norm(b)
        assert wins >= 11

    def test_recovers_easy_instances(self):
        hits = 0
        for seed in range(5):
            A, x_true, b = make_instance(64, 256, 4, seed=90 + seed)
            A = A.normalized()
            b = A.data @ x_true.to_dense()
            hits += recovered(ompr_solve(A, b, 4, BaselineConfig(eta=0.7)), x_true)
        assert hits >= 3

    def test_adaptive_variant_named(self, small_instance):
        A, _, b = small_instance
        x = ompr_solve(A, b, 5, BaselineConfig(adaptive_eta=True))
        assert x.meta["solver"] == "ompra"
        assert x.nnz <= 5

    def test_residual_not_worse_than_first_guess(self, small_instance):
        A, _, b = small_instance
        x = ompr_solve(A, b, 5)
        first = np.sort(np.argsort(-np.abs(A.data.T @ b), kind="stable")[:5])
        coef = np.linalg.lstsq(A.data[:, first], b, rcond=None)[0]
        r_first = np.linalg.norm(b - A.data[:, first] @ coef)
        assert np.linalg.norm(b - A.data @ x.to_dense()) <= r_first + 1e-10


class TestNiht:
    def test_recovers_easy_instances(self):
        hits = 0
        for seed in range(5):
            A, x_true, b = make_instance(64, 256, 4, seed=110 + seed)
            hits += recovered(niht_solve(A, b, 4), x_true)
        assert hits >= 3

    def test_output_is_k_sparse_and_finite(self, small_instance):
        A, _, b = small_instance
        x = niht_solve(A, b, 6, max_iter=20)
        assert x.nnz <= 6
        assert np.all(np.isfinite(x.values))
        assert "stalled" in x.meta


class TestPgLasso:
    def test_identity_is_soft_threshold(self, identity4):
        x = pg_lasso_full(identity4, np.array([3.0, 0.0, -1.0, 0.2]), 0.5, tol=1e-10)
        np.testing.assert_allclose(x.to_dense(), [2.5, 0.0, -0.5, 0.0], atol=1e-8)
        assert x.meta["converged"] is True

    def test_rejects_non_positive_lambda(self, identity4):
        with pytest.raises(InvalidArgumentError):
            pg_lasso_full(identity4, np.ones(4), 0.0)

    def test_reports_non_convergence(self, small_instance):
        A, _, b = small_instance
        x = pg_lasso_full(A, b, 1e-4, tol=1e-14, max_iter=3)
        assert x.meta["converged"] is False
        assert x.meta["iterations"] == 3


class TestDenseRegressors:
    def test_l2_is_min_norm_solution(self, rng):
        A = DesignMatrix(rng.standard_normal((6, 15)))
        b = rng.standard_normal(6)
        x = l2_fit(A, b)
        np.testing.assert_allclose(x, np.linalg.pinv(A.data) @ b, atol=1e-10)
        np.testing.assert_allclose(A.data @ x, b, atol=1e-10)

    def test_l2_flags_rank_deficiency(self, rng):
        col = rng.standard_normal(5)
        A = DesignMatrix(np.column_stack([col, col, col]))
        model = L2Predictor().fit(A)
        assert model.info["rank"] == 1
        assert model.info["rank_deficient"] is True

    @pytest.mark.parametrize("shape", [(20, 6), (6, 20)])
    def test_ridge_matches_formula(self, rng, shape):
        A = DesignMatrix(rng.standard_normal(shape))
        b = rng.standard_normal(shape[0])
        lam = 0.3
        expected = np.linalg.solve(A.data.T @ A.data + lam * np.eye(shape[1]), A.data.T @ b)
        np.testing.assert_allclose(l2l2_fit(A, b, lam), expected, atol=1e-8)

    def test_ridge_form_depends_on_shape(self, rng):
        tall = RidgePredictor(0.1).fit(DesignMatrix(rng.standard_normal((10, 4))))
        wide = RidgePredictor(0.1).fit(DesignMatrix(rng.standard_normal((4, 10))))
        assert (tall.info["form"], wide.info["form"]) == ("primal", "dual")

    def test_predict_before_fit(self):
        with pytest.raises(InvalidArgumentError):
            L2Predictor().predict(np.ones(3))
        with pytest.raises(InvalidArgumentError):
            RidgePredictor().predict(np.ones(3))

    def test_negative_ridge_rejected(self):
        with pytest.raises(InvalidArgumentError):
            RidgePredictor(-1.0)
