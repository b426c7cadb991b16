"""
Master-problem solvers over a working support I.

pg_solve handles the l1-regularized problem (lambda > 0) by proximal gradient
with backtracking; cgd_solve handles plain least squares (lambda = 0) by
Polak-Ribiere conjugate gradients with exact line search. Both work on a
restricted problem, either in dense form (A_I, b) or in Gram form
(Q_II, [A^T b]_I, ||b||^2) so batch decoding can reuse them.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import linalg

from .core import as_vector
from .errors import InvalidArgumentError, SolverDivergedError
from .schemas import DesignMatrix, GmpConfig, SparseSolution

MAX_DOUBLINGS = 60
CURVATURE_TOL = 1e-14
PIVOT_TOL = 1e-12


@dataclass
class InnerState:
    """Final state of an inner solve; residual is None for Gram-form problems"""
    u: np.ndarray
    L: float
    k: int
    objective: float
    residual: Optional[np.ndarray] = None
    converged: bool = False
    degenerate: bool = False
    first_step_decrease: Optional[float] = None
    first_step_L: Optional[float] = None


class DenseRestricted:
    """0.5*||b - A_I u||^2 over the columns I of a design matrix"""

    def __init__(self, A: DesignMatrix, b: np.ndarray, indices: Sequence[int]):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.A_I = A.columns(self.indices)
        self.b = b
        self.diag = A.col_norms[self.indices] ** 2

    @property
    def size(self) -> int:
        return self.indices.size

    def residual(self, u: np.ndarray) -> np.ndarray:
        return self.b - self.A_I @ u

    def phi(self, u: np.ndarray) -> float:
        r = self.residual(u)
        return 0.5 * float(r @ r)

    def phi_grad(self, u: np.ndarray) -> Tuple[float, np.ndarray]:
        r = self.residual(u)
        return 0.5 * float(r @ r), -(self.A_I.T @ r)

    def grad(self, u: np.ndarray) -> np.ndarray:
        return -(self.A_I.T @ self.residual(u))

    def curvature(self, p: np.ndarray) -> float:
        Ap = self.A_I @ p
        return float(Ap @ Ap)


class GramRestricted:
    """0.5*(||b||^2 - 2 Atb_I.u + u' Q_II u), the same objective without touching A"""

    def __init__(self, Q: np.ndarray, Atb: np.ndarray, bnorm2: float, indices: Sequence[int]):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.Q_II = Q[np.ix_(self.indices, self.indices)]
        self.c = Atb[self.indices]
        self.bnorm2 = float(bnorm2)
        self.diag = np.diag(self.Q_II).copy()

    @property
    def size(self) -> int:
        return self.indices.size

    def residual(self, u: np.ndarray) -> None:
        return None

    def phi(self, u: np.ndarray) -> float:
        return 0.5 * (self.bnorm2 - 2.0 * float(self.c @ u) + float(u @ (self.Q_II @ u)))

    def phi_grad(self, u: np.ndarray) -> Tuple[float, np.ndarray]:
        Qu = self.Q_II @ u
        phi = 0.5 * (self.bnorm2 - 2.0 * float(self.c @ u) + float(u @ Qu))
        return phi, Qu - self.c

    def grad(self, u: np.ndarray) -> np.ndarray:
        return self.Q_II @ u - self.c

    def curvature(self, p: np.ndarray) -> float:
        return float(p @ (self.Q_II @ p))

    def solve_direct(self) -> Optional[np.ndarray]:
        """
        Least-squares minimizer from a Cholesky factor of Q_II.
        Returns None when a pivot falls below PIVOT_TOL * max diag(Q_II).
        """
        if self.size == 0:
            return np.empty(0)
        try:
            factor, lower = linalg.cho_factor(self.Q_II, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return None
        if np.min(np.diag(factor)) ** 2 <= PIVOT_TOL * float(self.diag.max()):
            return None
        return linalg.cho_solve((factor, lower), self.c, check_finite=False)


def soft_threshold(o: np.ndarray, lam: float, L: float) -> np.ndarray:
    """
    Componentwise shrinkage S_{L,lam}(o)_i = sign(o_i) * max(|o_i| - lam/L, 0).

    Raises:
        InvalidArgumentError: L <= 0 or lam < 0
    """
    if not L > 0:
        raise InvalidArgumentError(f"L must be > 0, got {L}")
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    o = np.asarray(o, dtype=np.float64)
    return np.sign(o) * np.maximum(np.abs(o) - lam / L, 0.0)


def generalized_gradient(u: np.ndarray, g: np.ndarray, lam: float, L: float) -> np.ndarray:
    """
    G(u) = L*(u - S_{L,lam}(u - g/L)); equals g itself when lam = 0.
    Its infinity norm vanishing certifies optimality of the restricted l1 problem.
    """
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if u.shape != g.shape:
        raise InvalidArgumentError(f"u and g shapes differ: {u.shape} vs {g.shape}")
    if not L > 0:
        raise InvalidArgumentError(f"L must be > 0, got {L}")
    if lam == 0:
        return g.copy()
    return L * (u - soft_threshold(u - g / L, lam, L))


def _initial_L(problem) -> float:
    L = float(problem.diag.max()) if problem.size else 1.0
    return L if L > 0 else 1.0


def _pg(problem, warm: np.ndarray, lam: float, L: Optional[float], max_inner: int, tol: float) -> InnerState:
    u = np.array(warm, dtype=np.float64)
    L = _initial_L(problem) if L is None or not L > 0 else float(L)
    phi, grad = problem.phi_grad(u)
    f = phi + lam * float(np.abs(u).sum())
    state = InnerState(u=u, L=L, k=0, objective=f)

    for k in range(max_inner):
        G = generalized_gradient(u, grad, lam, L)
        if np.max(np.abs(G), initial=0.0) <= tol:
            state.converged = True
            break

        accepted = False
        for _ in range(MAX_DOUBLINGS):
            u_new = soft_threshold(u - grad / L, lam, L)
            diff = u_new - u
            phi_new = problem.phi(u_new)
            f_new = phi_new + lam * float(np.abs(u_new).sum())
            if not np.isfinite(f_new):
                raise SolverDivergedError(f"non-finite objective at inner step {k} (L={L:.3e})")
            model = phi + float(grad @ diff) + 0.5 * L * float(diff @ diff) + lam * float(np.abs(u_new).sum())
            slack = 1e-12 * max(1.0, abs(phi))
            if f_new <= model + slack and f_new <= f:
                accepted = True
                break
            L *= 2.0

        if not accepted:
            # no representable descent left at this point
            logger.debug(f"PG line search exhausted at inner step {k}, L={L:.3e}")
            state.converged = True
            break

        if state.first_step_decrease is None:
            state.first_step_decrease = f - f_new
            state.first_step_L = L
        u = u_new
        phi, grad = problem.phi_grad(u)
        f = phi + lam * float(np.abs(u).sum())
        state.k = k + 1

    state.u = u
    state.L = L
    state.objective = f
    state.residual = problem.residual(u)
    return state


def _cgd(problem, warm: np.ndarray, max_inner: int, tol: float) -> InnerState:
    u = np.array(warm, dtype=np.float64)
    s = problem.size
    f, grad = problem.phi_grad(u)
    p = -grad
    since_restart = 0
    state = InnerState(u=u, L=_initial_L(problem), k=0, objective=f)
    best_u, best_f = u, f

    for k in range(max_inner):
        if np.max(np.abs(grad), initial=0.0) <= tol:
            state.converged = True
            break
        slope = float(grad @ p)
        if slope >= 0:
            p = -grad
            slope = float(grad @ p)
            since_restart = 0
        pp = float(p @ p)
        curv = problem.curvature(p)
        if curv <= CURVATURE_TOL * pp:
            state.degenerate = True
            logger.debug(f"CGD stopped on vanishing curvature at step {k}")
            break
        alpha = -slope / curv
        u = u + alpha * p
        f, grad_new = problem.phi_grad(u)
        # past the rounding floor f can tick up; the lowest iterate is returned
        if f <= best_f:
            best_u, best_f = u, f
        since_restart += 1
        if since_restart >= s:
            p = -grad_new
            since_restart = 0
        else:
            beta = max(0.0, float(grad_new @ (grad_new - grad)) / float(grad @ grad))
            p = -grad_new + beta * p
        grad = grad_new
        state.k = k + 1

    state.u = best_u
    state.objective = best_f
    state.residual = problem.residual(best_u)
    return state


def _prepare(A: DesignMatrix, b, I, warm) -> Tuple[DenseRestricted, np.ndarray, np.ndarray]:
    b = as_vector(b, A.n, "b")
    indices = np.asarray(I, dtype=np.int64).reshape(-1)
    if indices.size == 0:
        raise InvalidArgumentError("working set I must not be empty")
    if np.unique(indices).size != indices.size:
        raise InvalidArgumentError("working set I has repeated indices")
    warm = as_vector(warm, indices.size, "warm start")
    return DenseRestricted(A, b, indices), warm, b


def pg_solve(
    A: DesignMatrix,
    b: np.ndarray,
    I: Sequence[int],
    warm: np.ndarray,
    cfg: GmpConfig,
    L: Optional[float] = None,
) -> Tuple[np.ndarray, InnerState]:
    """
    Proximal gradient on min lam*||u||_1 + 0.5*||b - A_I u||^2.

    Args:
        A: design matrix
        b: measurements
        I: working support, distinct indices
        warm: starting coefficients over I
        cfg: supplies lam, max_inner and inner_tol
        L: starting step constant; defaults to max ||a_j||^2 over I

    Returns:
        (u, InnerState); stops once ||G(u)||_inf <= inner_tol or after max_inner steps
    """
    problem, warm, _ = _prepare(A, b, I, warm)
    state = _pg(problem, warm, cfg.lam, L, cfg.max_inner, cfg.inner_tol)
    return state.u, state


def cgd_solve(
    A: DesignMatrix,
    b: np.ndarray,
    I: Sequence[int],
    warm: np.ndarray,
    cfg: GmpConfig,
) -> Tuple[np.ndarray, InnerState]:
    """
    Conjugate gradients on min 0.5*||b - A_I u||^2 (cfg.lam is ignored).
    A vanishing curvature direction stops the solve with state.degenerate set.
    """
    problem, warm, _ = _prepare(A, b, I, warm)
    state = _cgd(problem, warm, cfg.max_inner, cfg.inner_tol)
    return state.u, state


def debias(
    A: DesignMatrix,
    b: np.ndarray,
    x: SparseSolution,
    max_inner: Optional[int] = None,
    tol: float = 1e-10,
) -> SparseSolution:
    """Least-squares refit of x on its own support, keeping the support unchanged"""
    if x.nnz == 0:
        raise InvalidArgumentError("cannot debias an empty solution")
    cfg = GmpConfig(max_inner=max_inner or max(50, 4 * x.nnz), inner_tol=tol)
    u, state = cgd_solve(A, b, x.support, x.values, cfg)
    meta = dict(x.meta)
    meta["debiased"] = True
    meta["degenerate"] = bool(meta.get("degenerate", False) or state.degenerate)
    return SparseSolution(x.support.copy(), u, x.m, meta)
