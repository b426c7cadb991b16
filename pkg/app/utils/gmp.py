"""
General matching pursuit (GMP) and its subspace-exploratory variant (SGMP).

Each outer step correlates the residual with every atom, adds the atoms that
violate |a_j' r| <= lambda the most, and re-solves the master problem over the
selected atoms with a warm start (PG for lambda > 0, CGD for lambda = 0).
"""
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from .core import FlopCounter, as_vector
from .errors import InvalidArgumentError
from .inner_solvers import DenseRestricted, InnerState, _cgd, _pg
from .schemas import (
    ActiveSet,
    DesignMatrix,
    GmpConfig,
    Residual,
    SolveTrace,
    SparseSolution,
    StopRule,
)


@dataclass
class StopDecision:
    stop: bool
    rule: Optional[str] = None

    def __bool__(self) -> bool:
        return self.stop


class DenseOperator:
    """Correlation and restriction oracle backed by the design matrix itself"""

    def __init__(self, A: DesignMatrix, b: np.ndarray, flops: Optional[FlopCounter] = None):
        self.A = A
        self.b = as_vector(b, A.n, "b")
        self.bnorm2 = float(self.b @ self.b)
        self.theta0 = 0.5 * self.bnorm2
        self.flops = flops if flops is not None else FlopCounter()
        self._residual = self.b.copy()

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def m(self) -> int:
        return self.A.m

    def correlations(self, indices: np.ndarray, x_I: np.ndarray) -> np.ndarray:
        if indices.size:
            self._residual = self.b - self.A.data[:, indices] @ x_I
        else:
            self._residual = self.b.copy()
        self.flops.add_correlation(2 * self.n * (self.m + indices.size))
        return self.A.data.T @ self._residual

    def residual(self, indices: np.ndarray, x_I: np.ndarray, g: np.ndarray) -> Residual:
        return Residual(self._residual)

    def restrict(self, indices: Sequence[int]) -> DenseRestricted:
        return DenseRestricted(self.A, self.b, indices)

    def solve(self, indices: np.ndarray, warm: np.ndarray, cfg: GmpConfig, L: Optional[float]) -> InnerState:
        return _solve_master(self.restrict(indices), warm, cfg, L, cfg.max_inner)


def worst_case_select(
    g: np.ndarray, excluded, rho: int, lam: float
) -> List[int]:
    """
    Pick up to rho atoms with the largest |g_i| > lam outside ``excluded``.

    Returns:
        Indices sorted by |g_i| descending, lowest index first among ties;
        an empty list means no atom violates the optimality condition
    """
    if rho < 1:
        raise InvalidArgumentError(f"rho must be >= 1, got {rho}")
    mag = np.abs(np.asarray(g, dtype=np.float64))
    if excluded is not None and len(excluded):
        mag[np.fromiter((int(j) for j in excluded), dtype=np.int64)] = -np.inf
    idx = np.flatnonzero(mag > lam)
    if idx.size > rho:
        vals = mag[idx]
        kth = np.partition(vals, idx.size - rho)[idx.size - rho]
        idx = idx[vals >= kth]
    order = idx[np.lexsort((idx, -mag[idx]))]
    return order[:rho].tolist()


def _solve_master(problem, warm: np.ndarray, cfg: GmpConfig, L: Optional[float], max_inner: int) -> InnerState:
    if cfg.lam > 0:
        return _pg(problem, warm, cfg.lam, L, max_inner, cfg.inner_tol)
    return _cgd(problem, warm, max_inner, cfg.inner_tol)


def _explore_select(
    op,
    state: ActiveSet,
    g: np.ndarray,
    cfg: GmpConfig,
    x_warm: np.ndarray,
    rho: int,
    L: Optional[float] = None,
) -> List[int]:
    if cfg.omega <= 1:
        return worst_case_select(g, state.all_indices, rho, cfg.lam)

    candidates = worst_case_select(g, state.all_indices, cfg.omega * rho, cfg.lam)
    if len(candidates) <= rho:
        return candidates

    n_old = len(state)
    explore = np.concatenate([state.as_array(), np.asarray(candidates, dtype=np.int64)])
    warm = np.concatenate([np.asarray(x_warm, dtype=np.float64), np.zeros(len(candidates))])
    inner = _solve_master(op.restrict(explore), warm, cfg, L, max(1, cfg.max_inner // 2))
    weights = np.abs(inner.u[n_old:])

    order = np.argsort(-weights, kind="stable")
    chosen = [candidates[i] for i in order if weights[i] > 0][:rho]
    if not chosen:
        return candidates[:rho]
    return chosen


def sgmp_select(
    A: DesignMatrix,
    b: np.ndarray,
    state: ActiveSet,
    g: np.ndarray,
    cfg: GmpConfig,
    x_warm: np.ndarray,
) -> List[int]:
    """
    Subspace-exploratory selection: take the omega*rho strongest violators,
    solve the master problem over I_t plus those candidates, and keep the rho
    candidates with the largest |u_i|.
    """
    op = DenseOperator(A, b)
    return _explore_select(op, state, np.asarray(g, dtype=np.float64), cfg, x_warm, cfg.rho)


def default_stop_rules(cfg: GmpConfig) -> List[StopRule]:
    rules = [StopRule.relative_delta(cfg.epsilon)]
    if cfg.lam > 0:
        rules.append(StopRule.grad_inf(cfg.lam + cfg.inner_tol))
    return rules


def check_stop(
    trace: SolveTrace,
    residual: Union[Residual, float, np.ndarray],
    g: np.ndarray,
    rules: Sequence[StopRule],
) -> StopDecision:
    """
    Evaluate stop rules with OR semantics.

    Args:
        trace: history so far; relative_delta is skipped before the first outer step
        residual: Residual, residual vector, or its norm
        g: current correlations A^T residual
        rules: rules to test, in order

    Returns:
        StopDecision naming the first rule that fired
    """
    if isinstance(residual, Residual):
        r_norm = residual.norm()
    elif np.ndim(residual) == 0:
        r_norm = float(residual)
    else:
        r_norm = float(np.linalg.norm(residual))
    bnorm2 = 2.0 * trace.theta0

    for rule in rules:
        if rule.kind == "relative_delta":
            if not trace.delta_per_outer:
                continue
            delta = trace.delta_per_outer[-1]
            if bnorm2 <= 0 or 2.0 * delta / bnorm2 <= rule.threshold:
                return StopDecision(True, rule.kind)
        elif rule.kind == "grad_inf":
            if np.max(np.abs(g), initial=0.0) <= rule.threshold:
                return StopDecision(True, rule.kind)
        elif rule.kind == "residual_norm":
            if r_norm <= rule.threshold:
                return StopDecision(True, rule.kind)
        elif rule.kind == "relative_residual":
            if bnorm2 <= 0 or r_norm * r_norm / bnorm2 <= rule.threshold:
                return StopDecision(True, rule.kind)
    return StopDecision(False)


SelectFn = Callable[..., List[int]]


def pursue(
    op,
    cfg: GmpConfig,
    stops: Optional[Sequence[StopRule]],
    select: SelectFn,
    name: str,
) -> Tuple[SparseSolution, SolveTrace]:
    """
    Outer loop shared by GMP, SGMP and the batch-mode variant.
    ``op`` supplies correlations, residuals and restricted problems.
    """
    rules = list(default_stop_rules(cfg) if stops is None else stops)
    trace = SolveTrace(theta0=op.theta0)
    active = ActiveSet()
    x_I = np.empty(0)

    if op.bnorm2 == 0:
        trace.stop_reason = "zero_signal"
        return SparseSolution.empty(op.m, solver=name, stop_reason="zero_signal", converged=True), trace

    max_atoms = cfg.resolve_max_atoms(op.n, op.m)
    L: Optional[float] = None
    degenerate = False
    capped = False
    stop_reason = "max_outer"

    for t in range(cfg.max_outer):
        indices = active.as_array()
        g = op.correlations(indices, x_I)

        if len(active) >= max_atoms:
            capped = True
            stop_reason = "capped"
            break
        decision = check_stop(trace, op.residual(indices, x_I, g), g, rules)
        if decision:
            stop_reason = decision.rule
            break

        rho = min(cfg.rho, max_atoms - len(active))
        J = select(op, active, g, cfg, x_I, rho, L)
        if not J:
            stop_reason = "no_violators"
            break

        started = time.perf_counter()
        active.add_round(J)
        warm = np.concatenate([x_I, np.zeros(len(J))])
        if cfg.lam > 0 and L is not None:
            L = 0.5 * L
        inner = op.solve(active.as_array(), warm, cfg, L)
        if cfg.lam > 0:
            L = inner.L
            if inner.first_step_decrease is not None:
                g_J = np.abs(g[np.asarray(J)])
                bound = float(np.sum((g_J - cfg.lam) ** 2)) / (2.0 * inner.first_step_L)
                trace.first_step_decrease.append(float(inner.first_step_decrease))
                trace.first_step_bound.append(bound)
        degenerate = degenerate or inner.degenerate
        x_I = inner.u
        objective = inner.objective
        trace.record(objective, len(active), inner.k, time.perf_counter() - started, J)
        logger.debug(
            f"{name} outer {t + 1}: f={objective:.6e} |I|={len(active)} inner={inner.k}"
        )

    trace.stop_reason = stop_reason
    meta = {
        "solver": name,
        "stop_reason": stop_reason,
        "capped": capped,
        "degenerate": degenerate,
        "converged": stop_reason not in ("max_outer", "capped"),
        "outer_iterations": trace.n_outer,
        "rounds": [list(r) for r in active.rounds],
        "selection_order": list(active.all_indices),
    }
    solution = SparseSolution(active.as_array(), x_I, op.m, meta).finalize()
    logger.debug(f"{name} finished: {stop_reason} after {trace.n_outer} outer steps, nnz={solution.nnz}")
    return solution, trace


def _worst_case(op, active, g, cfg, x_I, rho, L):
    return worst_case_select(g, active.all_indices, rho, cfg.lam)


def _exploratory(op, active, g, cfg, x_I, rho, L):
    return _explore_select(op, active, g, cfg, x_I, rho, L)


def gmp_solve(
    A: DesignMatrix,
    b: np.ndarray,
    cfg: GmpConfig,
    stops: Optional[Sequence[StopRule]] = None,
    flops: Optional[FlopCounter] = None,
) -> Tuple[SparseSolution, SolveTrace]:
    """
    General matching pursuit.

    Args:
        A: design matrix
        b: measurements, length n
        cfg: rho, lam, epsilon and caps
        stops: stop rules; None means relative_delta(epsilon), plus
            grad_inf(lam + inner_tol) when lam > 0
        flops: optional counter for correlation work

    Returns:
        (solution, trace); solution.meta reports stop_reason, capped and degenerate
    """
    return pursue(DenseOperator(A, b, flops), cfg, stops, _worst_case, "gmp")


def sgmp_solve(
    A: DesignMatrix,
    b: np.ndarray,
    cfg: GmpConfig,
    stops: Optional[Sequence[StopRule]] = None,
    flops: Optional[FlopCounter] = None,
) -> Tuple[SparseSolution, SolveTrace]:
    """GMP with subspace-exploratory selection; identical to gmp_solve when omega = 1"""
    return pursue(DenseOperator(A, b, flops), cfg, stops, _exploratory, "sgmp")


def write_trace_csv(trace: SolveTrace, path: Union[str, Path]) -> Path:
    """Write a solve trace as outer_iter, objective, delta, support_size, inner_iters, wall_ms"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_frame().to_csv(path, index=False, float_format="%.12g")
    logger.info(f"Trace written to {path}")
    return path
