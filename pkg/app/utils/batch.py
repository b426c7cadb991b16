"""
Batch-mode decoding: one Gram matrix Q = A^T A shared by many signals.

With Q cached, the correlations of an outer step become
A^T r = [A^T b] - Q[:, I] x_I, costing O(m |I|) instead of O(m n).
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import linalg

from .config import get_settings
from .core import FlopCounter, as_vector
from .errors import (
    CapacityExceededError,
    DimensionMismatchError,
    InvalidArgumentError,
)
from .gmp import _exploratory, _solve_master, _worst_case, pursue
from .inner_solvers import GramRestricted, InnerState, _cgd, _initial_L
from .schemas import DesignMatrix, GmpConfig, SolveTrace, SparseSolution, StopRule

BOMP_DEFAULT_K = 200


@dataclass(frozen=True, eq=False)
class GramCache:
    """Read-only Q = A^T A for one design matrix"""
    Q: np.ndarray
    A: DesignMatrix
    build_flops: int = 0

    @property
    def m(self) -> int:
        return self.A.m

    @property
    def n(self) -> int:
        return self.A.n

    def signal(self, b: np.ndarray, flops: Optional[FlopCounter] = None) -> Tuple[np.ndarray, float]:
        """
        Per-signal precomputation.

        Returns:
            (A^T b, ||b||^2)
        """
        b = as_vector(b, self.n, "b")
        if flops is not None:
            flops.add_setup(2 * self.n * self.m)
        return self.A.data.T @ b, float(b @ b)

    def nbytes(self) -> int:
        return int(self.Q.nbytes)


def build_gram(A: DesignMatrix, cap: Optional[int] = None) -> GramCache:
    """
    Precompute Q = A^T A, symmetrized as (Q + Q^T) / 2.

    Raises:
        CapacityExceededError: m above the cap (GMP_GRAM_CAP, default 32768)
    """
    cap = get_settings().gram_cap if cap is None else int(cap)
    if A.m > cap:
        gib = A.m * A.m * 8 / 2**30
        raise CapacityExceededError(
            f"Gram matrix for m={A.m} needs m^2*8 bytes = {gib:.1f} GiB; cap is m <= {cap}"
        )
    started = time.perf_counter()
    Q = A.data.T @ A.data
    Q = 0.5 * (Q + Q.T)
    Q.setflags(write=False)
    logger.info(f"Gram cache built for {A.n}x{A.m} in {1e3 * (time.perf_counter() - started):.1f} ms")
    return GramCache(Q=Q, A=A, build_flops=2 * A.n * A.m * A.m)


class GramOperator:
    """Correlation and restriction oracle in Gram form"""

    def __init__(self, cache: GramCache, Atb: np.ndarray, bnorm2: float, flops: Optional[FlopCounter] = None):
        if cache.Q.shape != (cache.m, cache.m):
            raise InvalidArgumentError(f"inconsistent cache: Q is {cache.Q.shape} for m={cache.m}")
        self.cache = cache
        self.Atb = as_vector(Atb, cache.m, "Atb")
        if not bnorm2 >= 0:
            raise InvalidArgumentError(f"||b||^2 must be >= 0, got {bnorm2}")
        self.bnorm2 = float(bnorm2)
        self.theta0 = 0.5 * self.bnorm2
        self.flops = flops if flops is not None else FlopCounter()

    @property
    def n(self) -> int:
        return self.cache.n

    @property
    def m(self) -> int:
        return self.cache.m

    def correlations(self, indices: np.ndarray, x_I: np.ndarray) -> np.ndarray:
        if indices.size == 0:
            return self.Atb.copy()
        self.flops.add_correlation(2 * self.m * indices.size)
        # Q is symmetric: rows I are the columns I, and a row gather is contiguous
        return self.Atb - x_I @ self.cache.Q[indices]

    def residual(self, indices: np.ndarray, x_I: np.ndarray, g: np.ndarray) -> float:
        """||b - A x||, from ||b||^2 - Atb_I.x - g_I.x"""
        if indices.size == 0:
            return float(np.sqrt(self.bnorm2))
        r2 = self.bnorm2 - float(self.Atb[indices] @ x_I) - float(g[indices] @ x_I)
        return float(np.sqrt(max(r2, 0.0)))

    def restrict(self, indices: Sequence[int]) -> GramRestricted:
        return GramRestricted(self.cache.Q, self.Atb, self.bnorm2, indices)

    def solve(self, indices: np.ndarray, warm: np.ndarray, cfg: GmpConfig, L: Optional[float]) -> InnerState:
        """
        Master solve over I. With lam = 0 the minimizer comes from a Cholesky
        factor of Q_II; CGD takes over when Q_II is near singular or the
        factored solution does not improve on the warm start.
        """
        problem = self.restrict(indices)
        if cfg.lam == 0:
            u = problem.solve_direct()
            if u is not None:
                f = problem.phi(u)
                if f <= problem.phi(warm):
                    return InnerState(u=u, L=_initial_L(problem), k=1, objective=f, converged=True)
        return _solve_master(problem, warm, cfg, L, cfg.max_inner)


def bgmp_solve(
    cache: GramCache,
    Atb: np.ndarray,
    bnorm2: float,
    cfg: GmpConfig,
    stops: Optional[Sequence[StopRule]] = None,
    flops: Optional[FlopCounter] = None,
) -> Tuple[SparseSolution, SolveTrace]:
    """
    Batch-mode GMP (SGMP when cfg.omega > 1) from a Gram cache.

    Args:
        cache: Gram cache of the design matrix
        Atb: A^T b for this signal
        bnorm2: ||b||^2 for this signal
        cfg: pursuit configuration
        stops: stop rules, as for gmp_solve

    Returns:
        (solution, trace), algebraically the same as gmp_solve on (A, b)
    """
    op = GramOperator(cache, Atb, bnorm2, flops)
    select = _exploratory if cfg.omega > 1 else _worst_case
    return pursue(op, cfg, stops, select, "bgmp")


def bomp_solve(
    cache: GramCache,
    Atb: np.ndarray,
    k: int,
    flops: Optional[FlopCounter] = None,
) -> SparseSolution:
    """
    Batch OMP with an incrementally updated Cholesky factor of Q_II.

    Stops after k atoms or when every correlation vanishes.
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    Atb = as_vector(Atb, cache.m, "Atb")
    flops = flops if flops is not None else FlopCounter()
    k = min(int(k), cache.m)
    Q = cache.Q
    corr_floor = 1e-12 * max(1.0, float(np.max(np.abs(Atb), initial=0.0)))

    selected: List[int] = []
    chol = np.zeros((0, 0))
    x_I = np.empty(0)
    alpha = Atb.copy()
    degenerate = False

    for _ in range(k):
        mag = np.abs(alpha)
        if selected:
            mag[selected] = -np.inf
        j = int(np.argmax(mag))
        if not mag[j] > corr_floor:
            break

        if selected:
            w = linalg.solve_triangular(chol, Q[j, selected], lower=True)
            d = float(Q[j, j] - w @ w)
            if d <= 1e-14 * max(float(Q[j, j]), 1e-300):
                degenerate = True
                selected.append(j)
                break
            grown = np.zeros((len(selected) + 1, len(selected) + 1))
            grown[:-1, :-1] = chol
            grown[-1, :-1] = w
            grown[-1, -1] = np.sqrt(d)
            chol = grown
        else:
            chol = np.array([[np.sqrt(Q[j, j])]])
        selected.append(j)

        x_I = linalg.cho_solve((chol, True), Atb[selected])
        flops.add_correlation(2 * cache.m * len(selected))
        alpha = Atb - x_I @ Q[selected]

    if degenerate:
        logger.warning(f"BOMP: Q_II singular at |I|={len(selected)}, refitting with CGD")
        # the ||b||^2 constant does not move the minimizer
        problem = GramRestricted(Q, Atb, 0.0, selected)
        warm = np.concatenate([x_I, np.zeros(len(selected) - x_I.size)])
        x_I = _cgd(problem, warm, 4 * len(selected), 1e-10).u

    meta = {
        "solver": "bomp",
        "degenerate": degenerate,
        "selection_order": list(selected),
        "converged": True,
    }
    return SparseSolution(np.asarray(selected, dtype=np.int64), x_I, cache.m, meta).finalize()


@dataclass
class BatchResult:
    """Per-signal outputs of a batch decode"""
    solutions: List[SparseSolution]
    residual_norms: List[float]
    wall_ms: List[float]
    flops: List[FlopCounter] = field(default_factory=list)
    traces: List[Optional[SolveTrace]] = field(default_factory=list)
    build_ms: float = 0.0
    build_flops: int = 0

    def total_flops(self) -> FlopCounter:
        return merge_flops(self.flops)


def merge_flops(counters: Iterable[FlopCounter]) -> FlopCounter:
    total = FlopCounter()
    for counter in counters:
        total = total + counter
    return total


def decode_batch(
    A: DesignMatrix,
    B: np.ndarray,
    solver: str = "bgmp",
    cfg: Optional[GmpConfig] = None,
    stops: Optional[Sequence[StopRule]] = None,
    k: int = BOMP_DEFAULT_K,
    workers: int = 1,
    cache: Optional[GramCache] = None,
) -> BatchResult:
    """
    Decode every column of B against A with bgmp or bomp, sharing one Gram cache.

    Args:
        A: design matrix
        B: n x batch matrix, one signal per column
        solver: "bgmp" or "bomp"
        cfg: pursuit configuration for bgmp
        stops: stop rules for bgmp
        k: atom budget for bomp
        workers: threads used for the per-signal decodes
        cache: reuse an existing Gram cache

    Returns:
        BatchResult in column order
    """
    if solver not in ("bgmp", "bomp"):
        raise InvalidArgumentError(f"batch solver must be bgmp or bomp, got {solver!r}")
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != A.n:
        raise DimensionMismatchError("signal rows", A.n, B.shape[0])
    cfg = cfg or GmpConfig()

    started = time.perf_counter()
    if cache is None:
        cache = build_gram(A)
    build_ms = 1e3 * (time.perf_counter() - started)

    # A^T b for every column in one product; each signal is still charged its 2nm share
    t0 = time.perf_counter()
    BtA = B.T @ A.data
    bnorms2 = np.einsum("ij,ij->j", B, B)
    setup_share = 1e3 * (time.perf_counter() - t0) / max(B.shape[1], 1)

    def decode(col: int):
        counter = FlopCounter()
        counter.add_setup(2 * A.n * A.m)
        t0 = time.perf_counter()
        Atb, bnorm2 = BtA[col], float(bnorms2[col])
        trace = None
        if solver == "bgmp":
            x, trace = bgmp_solve(cache, Atb, bnorm2, cfg, stops, counter)
        else:
            x = bomp_solve(cache, Atb, k, counter)
        wall = setup_share + 1e3 * (time.perf_counter() - t0)
        r = B[:, col] - (A.columns(x.support) @ x.values if x.nnz else 0.0)
        return x, float(np.linalg.norm(r)), wall, counter, trace

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(decode, range(B.shape[1])))
    else:
        outputs = [decode(col) for col in range(B.shape[1])]

    logger.info(f"Decoded {B.shape[1]} signals with {solver} (gram build {build_ms:.1f} ms)")
    return BatchResult(
        solutions=[o[0] for o in outputs],
        residual_norms=[o[1] for o in outputs],
        wall_ms=[o[2] for o in outputs],
        flops=[o[3] for o in outputs],
        traces=[o[4] for o in outputs],
        build_ms=build_ms,
        build_flops=cache.build_flops,
    )
