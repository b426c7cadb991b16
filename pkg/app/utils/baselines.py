"""
Comparison solvers: OMP, subspace pursuit, OMPR/OMPRA, normalized IHT,
full-problem proximal gradient LASSO, and the dense L2 / L2-L2 regressors.

niht_solve is a normalized iterative hard thresholding stand-in for
accelerated IHT; it keeps the monotone, local-minimum-prone behaviour
without the double over-relaxation.
"""
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from scipy import linalg

from .core import as_vector, restricted_lstsq, top_k
from .errors import InvalidArgumentError
from .gmp import check_stop
from .inner_solvers import DenseRestricted, _pg
from .schemas import (
    BaselineConfig,
    DesignMatrix,
    Residual,
    SolveTrace,
    SparseSolution,
    StopRule,
)


def _check_k_hat(A: DesignMatrix, k_hat: int) -> int:
    k_hat = int(k_hat)
    if k_hat < 1:
        raise InvalidArgumentError(f"k_hat must be >= 1, got {k_hat}")
    if k_hat > A.m:
        raise InvalidArgumentError(f"k_hat={k_hat} exceeds m={A.m}")
    return k_hat


def _refit(A: DesignMatrix, b: np.ndarray, support: np.ndarray):
    """LS coefficients on support, their residual, and a rank-deficiency flag"""
    coef, rank = restricted_lstsq(A, b, support)
    r = b - A.columns(support) @ coef if support.size else b.copy()
    return coef, r, rank < support.size


def omp_solve(
    A: DesignMatrix,
    b: np.ndarray,
    k: Optional[int] = None,
    stops: Optional[Sequence[StopRule]] = None,
) -> SparseSolution:
    """
    Orthogonal matching pursuit: add the atom with the largest |a_j' r|,
    then refit by least squares on all selected atoms.

    Args:
        A: design matrix
        b: measurements
        k: atom budget; defaults to min(n, m) when no stop rules are given
        stops: optional stop rules checked before each selection

    Returns:
        SparseSolution with meta["selection_order"]
    """
    b = as_vector(b, A.n, "b")
    if k is not None and int(k) < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    budget = min(int(k) if k is not None else min(A.n, A.m), A.m)
    rules = list(stops or [])
    trace = SolveTrace(theta0=0.5 * float(b @ b))

    selected: List[int] = []
    coef = np.empty(0)
    r = b.copy()
    degenerate = False
    g = A.data.T @ r
    floor = 1e-12 * max(1.0, float(np.max(np.abs(g), initial=0.0)))
    stop_reason = "budget"

    while len(selected) < budget:
        if rules:
            decision = check_stop(trace, Residual(r), g, rules)
            if decision:
                stop_reason = decision.rule
                break
        mag = np.abs(g)
        if selected:
            mag[selected] = -np.inf
        j = int(np.argmax(mag))
        if not mag[j] > floor:
            stop_reason = "zero_correlation"
            break
        selected.append(j)
        coef, r, rank_deficient = _refit(A, b, np.asarray(selected))
        degenerate = degenerate or rank_deficient
        trace.record(0.5 * float(r @ r), len(selected), 0, 0.0, [j])
        g = A.data.T @ r

    if degenerate:
        logger.warning(f"OMP refit was rank deficient at |I|={len(selected)}")
    meta = {
        "solver": "omp",
        "selection_order": list(selected),
        "degenerate": degenerate,
        "stop_reason": stop_reason,
        "converged": True,
    }
    return SparseSolution(np.asarray(selected, dtype=np.int64), coef, A.m, meta).finalize()


def sp_solve(A: DesignMatrix, b: np.ndarray, k_hat: int, max_iter: int = 50) -> SparseSolution:
    """
    Subspace pursuit. Merges the k_hat strongest correlations into the current
    support, refits, prunes back to k_hat by coefficient magnitude and refits
    again; stops once the residual no longer decreases.

    Returns:
        The iterate with the smallest residual seen
    """
    b = as_vector(b, A.n, "b")
    k_hat = _check_k_hat(A, k_hat)
    if k_hat > A.n:
        raise InvalidArgumentError(f"k_hat={k_hat} exceeds n={A.n}")

    support = np.sort(top_k(np.abs(A.data.T @ b), k_hat))
    coef, r, degenerate = _refit(A, b, support)
    best = (float(np.linalg.norm(r)), support, coef)
    iterations = 0

    for it in range(max_iter):
        iterations = it + 1
        mag = np.abs(A.data.T @ r)
        mag[support] = -np.inf
        merged = np.union1d(support, top_k(mag, k_hat))
        wide, _, rank_deficient = _refit(A, b, merged)
        degenerate = degenerate or rank_deficient
        candidate = np.sort(merged[top_k(np.abs(wide), k_hat)])
        cand_coef, cand_r, rank_deficient = _refit(A, b, candidate)
        degenerate = degenerate or rank_deficient
        cand_norm = float(np.linalg.norm(cand_r))
        if cand_norm >= best[0]:
            break
        support, coef, r = candidate, cand_coef, cand_r
        best = (cand_norm, support, coef)

    meta = {"solver": "sp", "iterations": iterations, "degenerate": degenerate, "converged": True}
    return SparseSolution(best[1], best[2], A.m, meta).finalize()


def adaptive_eta(A: DesignMatrix, g: np.ndarray, support: np.ndarray) -> float:
    """
    Exact line-search step along d = g restricted to ``support``:
    eta = ||d||^2 / ||A d||^2. Returns 0 when d vanishes.
    """
    d = np.zeros(A.m)
    d[support] = g[support]
    dd = float(d @ d)
    if dd == 0:
        return 0.0
    Ad = A.columns(support) @ d[support]
    curvature = float(Ad @ Ad)
    return dd / curvature if curvature > 0 else 0.0


def ompr_solve(
    A: DesignMatrix,
    b: np.ndarray,
    k_hat: int,
    cfg: Optional[BaselineConfig] = None,
) -> SparseSolution:
    """
    OMP with replacement: z = x + eta * A^T(b - Ax), keep the k_hat largest |z|,
    refit by least squares; repeat until the support stops changing.
    cfg.adaptive_eta picks eta by exact line search each step (OMPRA).
    """
    cfg = cfg or BaselineConfig()
    b = as_vector(b, A.n, "b")
    k_hat = _check_k_hat(A, k_hat)
    name = "ompra" if cfg.adaptive_eta else "ompr"

    support = np.sort(top_k(np.abs(A.data.T @ b), k_hat))
    coef, r, degenerate = _refit(A, b, support)
    best = (float(np.linalg.norm(r)), support, coef)
    iterations = 0

    for it in range(cfg.max_iter):
        iterations = it + 1
        g = A.data.T @ r
        x = np.zeros(A.m)
        x[support] = coef
        if cfg.adaptive_eta:
            off = np.abs(g)
            off[support] = -np.inf
            merged = np.union1d(support, top_k(off, k_hat))
            eta = adaptive_eta(A, g, merged) or cfg.eta
        else:
            eta = cfg.eta
        z = x + eta * g
        new_support = np.sort(top_k(np.abs(z), k_hat))
        if np.array_equal(new_support, support):
            break
        support = new_support
        coef, r, rank_deficient = _refit(A, b, support)
        degenerate = degenerate or rank_deficient
        r_norm = float(np.linalg.norm(r))
        if r_norm < best[0]:
            best = (r_norm, support, coef)

    meta = {"solver": name, "iterations": iterations, "degenerate": degenerate, "converged": True}
    return SparseSolution(best[1], best[2], A.m, meta).finalize()


def _hard_threshold(z: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(z)
    keep = top_k(np.abs(z), k)
    out[keep] = z[keep]
    return out


def niht_solve(
    A: DesignMatrix,
    b: np.ndarray,
    k_hat: int,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> SparseSolution:
    """
    Normalized IHT: x+ = H_k(x + mu * A^T(b - Ax)) with mu the exact step on the
    current support, halved until the residual does not grow. A final
    least-squares refit on the returned support is applied.
    """
    b = as_vector(b, A.n, "b")
    k_hat = _check_k_hat(A, k_hat)

    x = np.zeros(A.m)
    r = b.copy()
    r2 = float(r @ r)
    support = np.sort(top_k(np.abs(A.data.T @ b), k_hat))
    iterations = 0
    stalled = False

    for it in range(max_iter):
        iterations = it + 1
        g = A.data.T @ r
        g_T = g[support]
        Ag = A.columns(support) @ g_T
        denom = float(Ag @ Ag)
        if denom <= 0:
            break
        mu = float(g_T @ g_T) / denom

        accepted = False
        for _ in range(40):
            x_new = _hard_threshold(x + mu * g, k_hat)
            nz = np.flatnonzero(x_new)
            r_new = b - A.columns(nz) @ x_new[nz]
            r2_new = float(r_new @ r_new)
            if r2_new <= r2:
                accepted = True
                break
            mu *= 0.5
        if not accepted:
            stalled = True
            break

        new_support = np.sort(top_k(np.abs(x_new), k_hat))
        change = float(np.linalg.norm(x_new - x))
        scale = max(float(np.linalg.norm(x_new)), 1e-300)
        x, r, r2 = x_new, r_new, r2_new
        same = np.array_equal(new_support, support)
        support = new_support
        if same and change <= tol * scale:
            break

    nz = np.flatnonzero(x)
    degenerate = False
    if nz.size:
        coef, r_fit, degenerate = _refit(A, b, nz)
        if float(r_fit @ r_fit) <= r2:
            x = np.zeros(A.m)
            x[nz] = coef
    meta = {
        "solver": "niht",
        "iterations": iterations,
        "stalled": stalled,
        "degenerate": degenerate,
        "converged": not stalled,
    }
    return SparseSolution.from_dense(x, **meta).finalize()


def pg_lasso_full(
    A: DesignMatrix,
    b: np.ndarray,
    lam: float,
    tol: float = 1e-6,
    max_iter: int = 5000,
) -> SparseSolution:
    """
    Proximal gradient on the full LASSO problem over all m atoms.

    Returns:
        Best iterate; meta["converged"] is False when max_iter was reached
    """
    b = as_vector(b, A.n, "b")
    if not lam > 0:
        raise InvalidArgumentError(f"lambda must be > 0, got {lam}")
    problem = DenseRestricted(A, b, np.arange(A.m))
    state = _pg(problem, np.zeros(A.m), lam, None, max_iter, tol)
    if not state.converged:
        logger.warning(f"pg-lasso hit max_iter={max_iter} before ||G||_inf <= {tol}")
    meta = {
        "solver": "pg-lasso",
        "iterations": state.k,
        "converged": state.converged,
        "objective": state.objective,
    }
    return SparseSolution.from_dense(state.u, **meta).finalize()


class L2Predictor:
    """
    Minimum-norm least squares x = A^+ b with a precomputed pseudo-inverse.
    Singular values below max(n, m) * eps * s_max are treated as zero.
    """

    def __init__(self):
        self.operator_: Optional[np.ndarray] = None
        self.info: Dict[str, Any] = {}

    def fit(self, A: DesignMatrix) -> "L2Predictor":
        U, s, Vt = linalg.svd(A.data, full_matrices=False)
        s_max = float(s[0]) if s.size else 0.0
        cutoff = max(A.n, A.m) * np.finfo(np.float64).eps * s_max
        keep = s > cutoff
        rank = int(keep.sum())
        self.operator_ = (Vt[keep].T / s[keep]) @ U[:, keep].T
        rank_deficient = rank < min(A.n, A.m)
        self.info = {
            "rank": rank,
            "cutoff": cutoff,
            "condition": s_max / float(s[keep][-1]) if rank else np.inf,
            "rank_deficient": rank_deficient,
        }
        if rank_deficient:
            logger.warning(
                f"L2: design matrix is rank deficient (rank {rank} < {min(A.n, A.m)}), "
                "pseudo-inverse may be unstable"
            )
        return self

    def predict(self, b: np.ndarray) -> np.ndarray:
        if self.operator_ is None:
            raise InvalidArgumentError("L2Predictor.predict called before fit")
        return self.operator_ @ np.asarray(b, dtype=np.float64)


class RidgePredictor:
    """
    Ridge regression x = (A^T A + lam I)^{-1} A^T b, precomputed once.
    Uses the equivalent A^T (A A^T + lam I)^{-1} form when m > n.
    """

    def __init__(self, ridge_lambda: float = 1e-3):
        if ridge_lambda < 0:
            raise InvalidArgumentError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
        self.ridge_lambda = float(ridge_lambda)
        self.operator_: Optional[np.ndarray] = None
        self.info: Dict[str, Any] = {}

    def fit(self, A: DesignMatrix) -> "RidgePredictor":
        X = A.data
        try:
            if A.m <= A.n:
                factor = linalg.cho_factor(X.T @ X + self.ridge_lambda * np.eye(A.m))
                self.operator_ = linalg.cho_solve(factor, X.T)
                form = "primal"
            else:
                factor = linalg.cho_factor(X @ X.T + self.ridge_lambda * np.eye(A.n))
                self.operator_ = linalg.cho_solve(factor, X).T
                form = "dual"
            self.info = {"form": form, "fallback": False}
        except linalg.LinAlgError:
            logger.warning("L2-L2: normal matrix is singular, falling back to the pseudo-inverse")
            pinv = L2Predictor().fit(A)
            self.operator_ = pinv.operator_
            self.info = {"form": "pinv", "fallback": True, **pinv.info}
        return self

    def predict(self, b: np.ndarray) -> np.ndarray:
        if self.operator_ is None:
            raise InvalidArgumentError("RidgePredictor.predict called before fit")
        return self.operator_ @ np.asarray(b, dtype=np.float64)


def l2_fit(A: DesignMatrix, b: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares coefficients"""
    return L2Predictor().fit(A).predict(as_vector(b, A.n, "b"))


def l2l2_fit(A: DesignMatrix, b: np.ndarray, ridge_lambda: float = 1e-3) -> np.ndarray:
    """Ridge coefficients"""
    return RidgePredictor(ridge_lambda).fit(A).predict(as_vector(b, A.n, "b"))
