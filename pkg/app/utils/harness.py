"""
Experiment engine: problem generators, recovery metrics, parameter defaults,
the restricted-eigenvalue diagnostic and the sweep runner behind the CLI.
"""
import hashlib
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger

from .baselines import (
    l2_fit,
    l2l2_fit,
    niht_solve,
    omp_solve,
    ompr_solve,
    pg_lasso_full,
    sp_solve,
)
from .batch import GramCache, bgmp_solve, bomp_solve, build_gram
from .config import Settings, get_settings
from .core import as_vector, matvec
from .errors import CapacityExceededError, InvalidArgumentError
from .gmp import gmp_solve, sgmp_solve
from .inner_solvers import debias
from .schemas import (
    BaselineConfig,
    DesignMatrix,
    ExperimentPlan,
    GmpConfig,
    NoiseSpec,
    SignalSpec,
    SolverSpec,
    SolveTrace,
    SparseSolution,
    StopRule,
    TrialRecord,
)

SUCCESS_TOL = 1e-3
DEFAULT_K_HAT_FACTOR = 1.2
SOLVER_NAMES = ("omp", "bomp", "sp", "ompr", "ompra", "niht", "pg-lasso", "l2", "l2l2", "gmp", "sgmp", "bgmp")
L1_SOLVERS = ("gmp", "sgmp", "bgmp", "pg-lasso")
GRAM_SOLVERS = ("bgmp", "bomp")


def derive_seed(base_seed: int, *parts: Any) -> int:
    """Stable 63-bit seed from a base seed and cell coordinates"""
    key = "|".join([str(base_seed), *map(str, parts)]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") & (2**63 - 1)


def gen_matrix(n: int, m: int, seed: int) -> DesignMatrix:
    """i.i.d. N(0, 1) design matrix from numpy's PCG64 generator seeded with ``seed``"""
    if n < 1 or m < 1:
        raise InvalidArgumentError(f"n and m must be >= 1, got {n}x{m}")
    rng = np.random.default_rng(seed)
    return DesignMatrix(rng.standard_normal((n, m)))


def gen_signal(spec: SignalSpec) -> SparseSolution:
    """
    Exactly k nonzeros at uniformly random positions.

    zero_one draws +-1, uniform draws U(-1, 1), gaussian draws N(0, 1).
    """
    rng = np.random.default_rng(spec.seed)
    support = np.sort(rng.choice(spec.m, size=spec.k, replace=False))
    if spec.kind == "zero_one":
        values = rng.choice(np.array([-1.0, 1.0]), size=spec.k)
    else:
        draw = (lambda size: rng.uniform(-1.0, 1.0, size)) if spec.kind == "uniform" else rng.standard_normal
        values = draw(spec.k)
        zeros = values == 0
        while zeros.any():
            values[zeros] = draw(int(zeros.sum()))
            zeros = values == 0
    return SparseSolution(support, values, spec.m, {"kind": spec.kind, "seed": spec.seed})


def gen_noise(noise: NoiseSpec, n: int, seed: int) -> np.ndarray:
    if noise.kind == "none" or noise.level == 0:
        return np.zeros(n)
    rng = np.random.default_rng(seed)
    if noise.kind == "uniform":
        return rng.uniform(-noise.level, noise.level, n)
    return noise.level * rng.standard_normal(n)


def gen_nonrip(n: int, m: int, dup: int, seed: int) -> Tuple[DesignMatrix, SparseSolution, np.ndarray]:
    """
    Gaussian matrix whose columns dup..2*dup-1 copy columns 0..dup-1,
    ground truth of ones on the first block and noiseless b = A x.
    """
    if dup < 1 or 2 * dup > m:
        raise InvalidArgumentError(f"need 1 <= dup and 2*dup <= m, got dup={dup}, m={m}")
    data = np.random.default_rng(seed).standard_normal((n, m))
    data[:, dup : 2 * dup] = data[:, :dup]
    A = DesignMatrix(data)
    x_true = SparseSolution(np.arange(dup), np.ones(dup), m, {"kind": "nonrip"})
    return A, x_true, matvec(A, x_true)


def epsr(records: Sequence[TrialRecord]) -> float:
    """Fraction of successful trials in one (solver, signal kind, k) cell"""
    if not records:
        raise InvalidArgumentError("epsr needs at least one record")
    cells = {(r.solver, r.signal_kind, r.k) for r in records}
    if len(cells) > 1:
        raise InvalidArgumentError(f"records span several cells: {sorted(cells)}")
    return sum(1 for r in records if r.success) / len(records)


def default_rho(n: int, m: int, r: float = 4.0, rounding: str = "ceil") -> int:
    """
    rho = n / (r ln m), rounded up (or to nearest with rounding="round"), at least 1.
    For n=1024, m=8192, r=4 the ceiling gives 29 and rounding gives 28.
    """
    if r < 3:
        raise InvalidArgumentError(f"r must be >= 3, got {r}")
    if rounding not in ("ceil", "round"):
        raise InvalidArgumentError(f"rounding must be ceil or round, got {rounding!r}")
    if m < 2 or math.isinf(r):
        return 1
    raw = n / (r * math.log(m))
    value = math.ceil(raw) if rounding == "ceil" else int(math.floor(raw + 0.5))
    return max(1, value)


def default_rho_from_sparsity(k: int, r: float = 6.0) -> int:
    """rho = ceil(k / r) for r >= 6, when the target sparsity is known"""
    if r < 6:
        raise InvalidArgumentError(f"r must be >= 6, got {r}")
    return max(1, math.ceil(k / r))


def default_lambda(A: DesignMatrix, b: np.ndarray) -> float:
    """0.005 * ||A^T b||_inf"""
    b = as_vector(b, A.n, "b")
    return 0.005 * float(np.max(np.abs(A.data.T @ b), initial=0.0))


def lambda_ladder(A: DesignMatrix, b: np.ndarray) -> Dict[str, float]:
    """The default lambda together with 1e-3 and 1e-6 times it"""
    base = default_lambda(A, b)
    return {"lambda": base, "lambda_1e-3": 1e-3 * base, "lambda_1e-6": 1e-6 * base}


def k_hat_for(k: int, factor: float = DEFAULT_K_HAT_FACTOR) -> int:
    return max(1, math.ceil(round(factor * k, 9)))


@dataclass
class RipEstimate:
    """Extreme restricted eigenvalues over all size-k supports"""
    k: int
    delta: float
    gamma_minus: float
    gamma_plus: float
    kappa: float
    normalized: bool
    supports: int

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def estimate_rip(
    A: DesignMatrix,
    k: int,
    normalize: bool = True,
    cap: Optional[int] = None,
    chunk: int = 4096,
) -> RipEstimate:
    """
    Brute-force restricted eigenvalues by enumerating every size-k support.

    Raises:
        CapacityExceededError: C(m, k) above the cap (GMP_RIP_CAP, default 1e5)
    """
    if not 1 <= k <= A.m:
        raise InvalidArgumentError(f"need 1 <= k <= m, got k={k}, m={A.m}")
    cap = get_settings().rip_cap if cap is None else int(cap)
    total = math.comb(A.m, k)
    if total > cap:
        raise CapacityExceededError(
            f"C({A.m}, {k}) = {total} supports, each needing a {k}x{k} eigendecomposition; cap is {cap}"
        )
    M = A.normalized() if normalize else A
    Q = M.data.T @ M.data
    lo, hi = np.inf, -np.inf
    combos = itertools.combinations(range(A.m), k)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        sub = Q[block[:, :, None], block[:, None, :]]
        eig = np.linalg.eigvalsh(sub)
        lo = min(lo, float(eig[:, 0].min()))
        hi = max(hi, float(eig[:, -1].max()))

    gamma_minus = max(lo, 0.0)
    kappa = hi / gamma_minus if gamma_minus > 0 else np.inf
    return RipEstimate(
        k=k,
        delta=max(1.0 - gamma_minus, hi - 1.0),
        gamma_minus=gamma_minus,
        gamma_plus=hi,
        kappa=kappa,
        normalized=normalize,
        supports=total,
    )


def _gmp_config(
    A: DesignMatrix,
    b: np.ndarray,
    params: Dict[str, Any],
    omega_default: int,
    max_atoms_default: Optional[int] = None,
) -> GmpConfig:
    rho = params.get("rho", "auto")
    if rho == "auto":
        rho = default_rho(A.n, A.m, float(params.get("rho_r", 4.0)), params.get("rounding", "ceil"))
    lam = params.get("lambda", 0.0)
    if lam == "default":
        lam = default_lambda(A, b)
    if "lambda_scale" in params:
        lam = float(params["lambda_scale"]) * default_lambda(A, b)
    max_atoms = params.get("max_atoms", max_atoms_default)
    return GmpConfig(
        rho=int(rho),
        omega=int(params.get("omega", omega_default)),
        lam=float(lam),
        epsilon=float(params.get("epsilon", 1e-5)),
        max_outer=int(params.get("max_outer", 1000)),
        max_inner=int(params.get("max_inner", 50)),
        max_atoms=None if max_atoms == "none" else max_atoms,
        inner_tol=float(params.get("inner_tol", 1e-6)),
    )


def run_solver(
    spec: SolverSpec,
    A: DesignMatrix,
    b: np.ndarray,
    k: int,
    cache: Optional[GramCache] = None,
) -> Tuple[SparseSolution, Optional[SolveTrace]]:
    """
    Dispatch a registered solver by name.

    Args:
        spec: solver name and parameters
        A: design matrix
        b: measurements
        k: target sparsity of the trial, used for k_hat = ceil(1.2 k) defaults;
            GMP-family solvers stop at k_hat atoms unless params sets max_atoms
        cache: Gram cache for bgmp/bomp; built on demand when missing

    Returns:
        (solution, trace or None); l1 outputs are debiased unless params["debias"] is False
    """
    name = spec.name
    params = spec.params or {}
    if name not in SOLVER_NAMES:
        raise InvalidArgumentError(f"unknown solver {name!r}; choose from {SOLVER_NAMES}")
    k_hat = int(params.get("k_hat") or k_hat_for(k, float(params.get("k_hat_factor", DEFAULT_K_HAT_FACTOR))))
    trace = None

    if name in ("gmp", "sgmp", "bgmp"):
        # support budget k_hat like the baselines; max_atoms = None or "none" lifts it
        cfg = _gmp_config(A, b, params, 4 if name == "sgmp" else 1, min(k_hat, A.n))
        stops = [StopRule.parse(s) for s in params["stops"]] if "stops" in params else None
        if name == "bgmp":
            cache = cache or build_gram(A)
            Atb, bnorm2 = cache.signal(b)
            x, trace = bgmp_solve(cache, Atb, bnorm2, cfg, stops)
        else:
            solve = gmp_solve if name == "gmp" else sgmp_solve
            x, trace = solve(A, b, cfg, stops)
        lam = cfg.lam
    elif name == "omp":
        stops = [StopRule.relative_delta(float(params.get("epsilon", 1e-5)))]
        x = omp_solve(A, b, k=min(k_hat, A.n), stops=stops)
    elif name == "bomp":
        cache = cache or build_gram(A)
        Atb, _ = cache.signal(b)
        x = bomp_solve(cache, Atb, min(k_hat, A.n))
    elif name == "sp":
        x = sp_solve(A, b, min(k_hat, A.n), int(params.get("max_iter", 50)))
    elif name in ("ompr", "ompra"):
        cfg = BaselineConfig(
            eta=float(params.get("eta", 0.7)),
            adaptive_eta=name == "ompra",
            max_iter=int(params.get("max_iter", 100)),
        )
        if params.get("normalize", True):
            # eta is a step for unit-norm columns; coefficients map back through the column norms
            x = ompr_solve(A.normalized(), b, min(k_hat, A.n), cfg)
            scale = A.col_norms[x.support]
            x = SparseSolution(x.support, x.values / np.where(scale > 0, scale, 1.0), A.m, x.meta)
        else:
            x = ompr_solve(A, b, min(k_hat, A.n), cfg)
    elif name == "niht":
        x = niht_solve(A, b, min(k_hat, A.n), int(params.get("max_iter", 200)))
    elif name == "pg-lasso":
        lam = params.get("lambda", "default")
        lam = default_lambda(A, b) if lam == "default" else float(lam)
        x = pg_lasso_full(A, b, lam, float(params.get("tol", 1e-6)), int(params.get("max_iter", 5000)))
    elif name == "l2":
        x = SparseSolution.from_dense(l2_fit(A, b), solver="l2")
    else:
        x = SparseSolution.from_dense(
            l2l2_fit(A, b, float(params.get("ridge_lambda", 1e-3))), solver="l2l2"
        )

    if name in L1_SOLVERS and x.nnz and params.get("debias", True):
        if name == "pg-lasso" or lam > 0:
            x = debias(A, b, x)
    return x, trace


def recovery_metrics(A: DesignMatrix, b: np.ndarray, x_rec: SparseSolution, x_true: SparseSolution) -> Dict[str, float]:
    """rel_error, mse = ||e||^2 / m, residual norm, 0.5*||r||^2, success flag"""
    err = x_rec.to_dense() - x_true.to_dense()
    true_norm = float(np.linalg.norm(x_true.values))
    rel = float(np.linalg.norm(err)) / true_norm if true_norm > 0 else float(np.linalg.norm(err))
    r = b - matvec(A, x_rec)
    return {
        "rel_error": rel,
        "mse": float(err @ err) / x_true.m,
        "residual": float(np.linalg.norm(r)),
        "objective": 0.5 * float(r @ r),
        "success": rel <= SUCCESS_TOL,
    }


def run_trial(
    A: DesignMatrix,
    spec: SolverSpec,
    signal: SignalSpec,
    noise: NoiseSpec,
    trial: int = 0,
    cache: Optional[GramCache] = None,
) -> TrialRecord:
    """One seeded trial; solver exceptions are captured in the record"""
    x_true = gen_signal(signal)
    b = matvec(A, x_true) + gen_noise(noise, A.n, derive_seed(signal.seed, "noise"))
    started = time.perf_counter()
    try:
        x_rec, _ = run_solver(spec, A, b, signal.k, cache)
    except Exception as e:
        logger.warning(f"{spec.label} failed on k={signal.k} trial={trial}: {e}")
        return TrialRecord(
            solver=spec.label, signal_kind=signal.kind, k=signal.k, n=A.n, m=A.m,
            trial=trial, seed=signal.seed, success=False, rel_error=np.nan, mse=np.nan,
            residual=np.nan, objective=np.nan, sparsity_out=0,
            wall_ms=1e3 * (time.perf_counter() - started), error=f"{type(e).__name__}: {e}",
        )
    wall_ms = 1e3 * (time.perf_counter() - started)
    metrics = recovery_metrics(A, b, x_rec, x_true)
    return TrialRecord(
        solver=spec.label, signal_kind=signal.kind, k=signal.k, n=A.n, m=A.m,
        trial=trial, seed=signal.seed, sparsity_out=x_rec.nnz, wall_ms=wall_ms, **metrics,
    )


def summarize(records: Sequence[TrialRecord]) -> pd.DataFrame:
    """Per-cell EPSR, mean MSE and mean decoding time"""
    frame = pd.DataFrame([r.to_dict() for r in records])
    if frame.empty:
        return pd.DataFrame(columns=["solver", "signal_kind", "k", "trials", "epsr", "mean_mse", "mean_wall_ms", "failures"])
    rows = []
    for (solver, kind, k), cell in frame.groupby(["solver", "signal_kind", "k"], sort=True):
        cell_records = [records[i] for i in cell.index]
        rows.append({
            "solver": solver,
            "signal_kind": kind,
            "k": int(k),
            "trials": len(cell),
            "epsr": epsr(cell_records),
            "mean_mse": float(cell["mse"].mean()),
            "mean_wall_ms": float(cell["wall_ms"].mean()),
            "failures": int(cell["error"].notna().sum()),
        })
    return pd.DataFrame(rows)


@dataclass
class PlanReport:
    records: List[TrialRecord]
    summary: pd.DataFrame
    paths: Dict[str, Path] = field(default_factory=dict)


def load_plan_matrix(plan: ExperimentPlan) -> DesignMatrix:
    if plan.matrix.ensemble == "file":
        from .io import load_matrix

        return load_matrix(plan.matrix.path)
    return gen_matrix(plan.matrix.n, plan.matrix.m, plan.matrix.seed)


def run_plan(plan: ExperimentPlan, settings: Optional[Settings] = None, write: bool = True) -> PlanReport:
    """
    Run every (solver, signal kind, k, trial) cell of a plan.

    Signals depend only on (base_seed, kind, k, trial), so all solvers see the
    same instances. Records are sorted before writing, so the trial CSV is
    identical across reruns and worker counts.

    Returns:
        PlanReport with records, per-cell summary and written file paths
    """
    from . import io

    settings = settings or get_settings()
    A = load_plan_matrix(plan)
    for spec in plan.solvers:
        if spec.name not in SOLVER_NAMES:
            raise InvalidArgumentError(f"plan references unknown solver {spec.name!r}")

    cache = None
    if any(spec.name in GRAM_SOLVERS for spec in plan.solvers):
        cache = build_gram(A, settings.gram_cap)

    jobs = [
        (spec, kind, k, trial)
        for spec in plan.solvers
        for kind in plan.signal_kinds
        for k in plan.k_values
        for trial in range(plan.trials)
    ]
    workers = plan.workers or settings.workers
    logger.info(f"Plan {plan.name!r}: {len(jobs)} trials on {A.n}x{A.m} with {workers} worker(s)")

    def job(item):
        spec, kind, k, trial = item
        signal = SignalSpec(kind, k, A.m, derive_seed(plan.base_seed, kind, k, trial))
        return run_trial(A, spec, signal, plan.noise, trial, cache)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, jobs))
    else:
        records = [job(item) for item in jobs]

    records.sort(key=lambda r: (r.solver, r.signal_kind, r.k, r.trial))
    summary = summarize(records)
    report = PlanReport(records=records, summary=summary)

    if write:
        out_dir = Path(plan.output_dir) if plan.output_dir else settings.results_dir / plan.name
        report.paths = io.write_plan_outputs(records, summary, out_dir, parquet=plan.parquet)
    if plan.store:
        from .db import insert_trials

        insert_trials(plan.name, records)
    return report


@dataclass
class NonripResult:
    frame: pd.DataFrame
    traces: Dict[str, SolveTrace]


def _nonrip_row(name: str, A: DesignMatrix, b: np.ndarray, x: SparseSolution, trace: Optional[SolveTrace]) -> Dict[str, Any]:
    r = b - matvec(A, x)
    r2 = float(r @ r)
    monotone = None
    if trace is not None:
        monotone = bool(min(trace.delta_per_outer, default=0.0) >= -1e-12)
    return {
        "solver": name,
        "residual": float(np.sqrt(r2)),
        "relative_residual": r2 / float(b @ b),
        "objective": 0.5 * r2,
        "sparsity": x.nnz,
        "outer_iterations": trace.n_outer if trace is not None else x.meta.get("iterations"),
        "stop_reason": trace.stop_reason if trace is not None else None,
        "monotone": monotone,
    }


def nonrip_experiment(
    n: int = 128,
    m: int = 512,
    dup: int = 16,
    seed: int = 0,
    solvers: Sequence[str] = ("gmp", "sgmp", "sp", "niht", "ompra"),
) -> NonripResult:
    """Run solvers on the duplicated-column instance and report final residuals"""
    A, x_true, b = gen_nonrip(n, m, dup, seed)
    rows, traces = [], {}
    for name in solvers:
        x, trace = run_solver(SolverSpec(name, {"debias": False, "max_atoms": None}), A, b, dup)
        if trace is not None:
            traces[name] = trace
        rows.append(_nonrip_row(name, A, b, x, trace))
        logger.info(f"nonrip {name}: residual={rows[-1]['residual']:.3e} nnz={x.nnz}")
    return NonripResult(pd.DataFrame(rows), traces)


def nonrip_objective_sweep(
    n: int,
    m: int,
    k_values: Sequence[int],
    seed: int = 0,
    solvers: Sequence[str] = ("gmp", "sgmp", "sp", "niht"),
) -> pd.DataFrame:
    """
    Final 0.5*||b - Ax||^2 per solver for sparsities too large for exact recovery.
    Zero-one signals, noiseless measurements.
    """
    A = gen_matrix(n, m, seed)
    rows = []
    for k in k_values:
        x_true = gen_signal(SignalSpec("zero_one", int(k), m, derive_seed(seed, "zero_one", k, 0)))
        b = matvec(A, x_true)
        for name in solvers:
            x, trace = run_solver(SolverSpec(name, {"debias": False, "max_atoms": None}), A, b, int(k))
            row = _nonrip_row(name, A, b, x, trace)
            row["k"] = int(k)
            rows.append(row)
    return pd.DataFrame(rows)
