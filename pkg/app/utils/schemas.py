"""
Data schemas and dataclasses for the sparse recovery toolkit.
Defines the problem data, solver configuration, solve traces and experiment records.
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import (
    AtomIndexError,
    DimensionMismatchError,
    InvalidArgumentError,
)

# Coefficients at or below this magnitude are dropped by SparseSolution.finalize
PRUNE_TOL = 1e-12

SIGNAL_KINDS = ("zero_one", "uniform", "gaussian")
NOISE_KINDS = ("none", "uniform", "gaussian")
STOP_KINDS = ("relative_delta", "grad_inf", "residual_norm", "relative_residual")


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """
    Dense n x m dictionary A, stored column-major and read-only.
    Column norms are cached at construction.
    """
    data: np.ndarray
    col_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="F", copy=True)
        if arr.ndim != 2:
            raise InvalidArgumentError(f"design matrix must be 2-D, got ndim={arr.ndim}")
        n, m = arr.shape
        if n < 1 or m < 1:
            raise InvalidArgumentError(f"design matrix must be at least 1x1, got {n}x{m}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("design matrix has non-finite entries")
        arr.setflags(write=False)
        norms = np.linalg.norm(arr, axis=0)
        norms.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "col_norms", norms)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def column(self, j: int) -> np.ndarray:
        if not 0 <= j < self.m:
            raise AtomIndexError(j, self.m)
        return self.data[:, j]

    def columns(self, indices) -> np.ndarray:
        """Submatrix A_I for an index list"""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.m):
            bad = int(idx[(idx < 0) | (idx >= self.m)][0])
            raise AtomIndexError(bad, self.m)
        return self.data[:, idx]

    def normalized(self) -> "DesignMatrix":
        """Copy with unit-norm columns; zero columns are left as zero"""
        scale = np.where(self.col_norms > 0, self.col_norms, 1.0)
        return DesignMatrix(self.data / scale)


@dataclass(eq=False)
class SparseSolution:
    """
    Sparse coefficient vector x given by (support, values) over m atoms.
    meta carries solver flags such as degenerate, capped, converged, stop_reason.
    """
    support: np.ndarray
    values: np.ndarray
    m: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.int64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.m < 1:
            raise InvalidArgumentError(f"m must be >= 1, got {self.m}")
        if self.support.shape != self.values.shape:
            raise DimensionMismatchError("values", self.support.size, self.values.size)
        if self.support.size > self.m:
            raise InvalidArgumentError(f"support larger than m={self.m}")
        if self.support.size:
            if self.support.min() < 0 or self.support.max() >= self.m:
                bad = self.support[(self.support < 0) | (self.support >= self.m)][0]
                raise AtomIndexError(int(bad), self.m)
            if np.unique(self.support).size != self.support.size:
                raise InvalidArgumentError("support indices must be distinct")

    @classmethod
    def empty(cls, m: int, **meta) -> "SparseSolution":
        return cls(np.empty(0, dtype=np.int64), np.empty(0), m, dict(meta))

    @classmethod
    def from_dense(cls, x: np.ndarray, tol: float = PRUNE_TOL, **meta) -> "SparseSolution":
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        support = np.flatnonzero(np.abs(x) > tol)
        return cls(support, x[support], x.size, dict(meta))

    @property
    def nnz(self) -> int:
        return int(self.support.size)

    def __len__(self) -> int:
        return self.nnz

    def l1_norm(self) -> float:
        return float(np.abs(self.values).sum())

    def to_dense(self) -> np.ndarray:
        x = np.zeros(self.m)
        x[self.support] = self.values
        return x

    def finalize(self) -> "SparseSolution":
        """Sort the support ascending and prune |value| <= PRUNE_TOL"""
        meta = dict(self.meta)
        meta.setdefault("selection_order", self.support.tolist())
        keep = np.abs(self.values) > PRUNE_TOL
        support = self.support[keep]
        values = self.values[keep]
        order = np.argsort(support, kind="stable")
        return SparseSolution(support[order], values[order], self.m, meta)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "support": self.support.tolist(),
            "values": self.values.tolist(),
            "m": self.m,
            "meta": dict(self.meta),
        }


@dataclass(eq=False)
class Residual:
    """Residual vector b - Ax, which is also the dual variable a of the master problem"""
    vec: np.ndarray

    def __post_init__(self):
        self.vec = np.asarray(self.vec, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.vec)):
            raise InvalidArgumentError("residual has non-finite entries")

    @property
    def n(self) -> int:
        return self.vec.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))


@dataclass
class GmpConfig:
    """
    Knobs of the matching pursuit family.
    lam is the l1 weight (``lambda`` in dict form); max_atoms=None means min(n, 600).
    """
    rho: int = 1
    omega: int = 1
    lam: float = 0.0
    epsilon: float = 1e-5
    max_outer: int = 1000
    max_inner: int = 50
    max_atoms: Optional[int] = None
    inner_tol: float = 1e-6

    def __post_init__(self):
        if int(self.rho) < 1:
            raise InvalidArgumentError(f"rho must be >= 1, got {self.rho}")
        if int(self.omega) < 1:
            raise InvalidArgumentError(f"omega must be >= 1, got {self.omega}")
        if not self.lam >= 0:
            raise InvalidArgumentError(f"lambda must be >= 0, got {self.lam}")
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be > 0, got {self.epsilon}")
        if int(self.max_outer) < 1 or int(self.max_inner) < 1:
            raise InvalidArgumentError("max_outer and max_inner must be positive")
        if self.max_atoms is not None and int(self.max_atoms) < 1:
            raise InvalidArgumentError(f"max_atoms must be positive, got {self.max_atoms}")
        if not self.inner_tol > 0:
            raise InvalidArgumentError(f"inner_tol must be > 0, got {self.inner_tol}")
        self.rho = int(self.rho)
        self.omega = int(self.omega)
        self.lam = float(self.lam)
        self.max_outer = int(self.max_outer)
        self.max_inner = int(self.max_inner)

    def resolve_max_atoms(self, n: int, m: int) -> int:
        cap = min(n, 600) if self.max_atoms is None else int(self.max_atoms)
        return max(1, min(cap, m))

    def replace(self, **changes) -> "GmpConfig":
        data = asdict(self)
        data.update(changes)
        return GmpConfig(**data)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["lambda"] = data.pop("lam")
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GmpConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class StopRule:
    """One stopping test; a list of rules fires when any one of them does"""
    kind: str
    threshold: float

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise InvalidArgumentError(f"unknown stop rule kind {self.kind!r}")
        if not self.threshold > 0:
            raise InvalidArgumentError(f"stop threshold must be > 0, got {self.threshold}")

    @classmethod
    def relative_delta(cls, epsilon: float = 1e-5) -> "StopRule":
        """2*delta_t / ||b||^2 <= epsilon"""
        return cls("relative_delta", epsilon)

    @classmethod
    def grad_inf(cls, r_inf: float) -> "StopRule":
        """||A^T residual||_inf <= r_inf"""
        return cls("grad_inf", r_inf)

    @classmethod
    def residual_norm(cls, r_2: float) -> "StopRule":
        """||residual|| <= r_2"""
        return cls("residual_norm", r_2)

    @classmethod
    def relative_residual(cls, tol: float = 1e-6) -> "StopRule":
        """||residual||^2 / ||b||^2 <= tol"""
        return cls("relative_residual", tol)

    @classmethod
    def parse(cls, text: str) -> "StopRule":
        """Parse ``kind:threshold`` as used on the command line"""
        kind, _, value = text.partition(":")
        if not value:
            raise InvalidArgumentError(f"stop rule must look like kind:threshold, got {text!r}")
        return cls(kind.strip(), float(value))


@dataclass
class SolveTrace:
    """Per-outer-iteration history of a pursuit run"""
    theta0: float
    objective_per_outer: List[float] = field(default_factory=list)
    delta_per_outer: List[float] = field(default_factory=list)
    support_sizes: List[int] = field(default_factory=list)
    inner_iterations: List[int] = field(default_factory=list)
    wall_times: List[float] = field(default_factory=list)
    selections: List[List[int]] = field(default_factory=list)
    first_step_decrease: List[float] = field(default_factory=list)
    first_step_bound: List[float] = field(default_factory=list)
    stop_reason: Optional[str] = None

    @property
    def n_outer(self) -> int:
        return len(self.objective_per_outer)

    @property
    def last_objective(self) -> float:
        return self.objective_per_outer[-1] if self.objective_per_outer else self.theta0

    def record(
        self,
        objective: float,
        support_size: int,
        inner_iters: int,
        wall_seconds: float,
        selection: Sequence[int],
    ) -> None:
        self.delta_per_outer.append(self.last_objective - objective)
        self.objective_per_outer.append(float(objective))
        self.support_sizes.append(int(support_size))
        self.inner_iterations.append(int(inner_iters))
        self.wall_times.append(float(wall_seconds))
        self.selections.append([int(j) for j in selection])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "outer_iter": np.arange(1, self.n_outer + 1),
            "objective": self.objective_per_outer,
            "delta": self.delta_per_outer,
            "support_size": self.support_sizes,
            "inner_iters": self.inner_iterations,
            "wall_ms": [1e3 * w for w in self.wall_times],
        })


@dataclass
class ActiveSet:
    """Selected atoms I_t, kept as the disjoint union of per-round groups J_1..J_t"""
    all_indices: List[int] = field(default_factory=list)
    rounds: List[List[int]] = field(default_factory=list)

    def __post_init__(self):
        self._members = set(self.all_indices)

    def __contains__(self, j) -> bool:
        return int(j) in self._members

    def __len__(self) -> int:
        return len(self.all_indices)

    @property
    def members(self) -> frozenset:
        return frozenset(self._members)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.all_indices, dtype=np.int64)

    def add_round(self, indices: Sequence[int]) -> None:
        group = [int(j) for j in indices]
        if len(set(group)) != len(group):
            raise InvalidArgumentError("a selection round repeats an atom")
        overlap = self._members.intersection(group)
        if overlap:
            raise InvalidArgumentError(f"atoms {sorted(overlap)} were already selected")
        self.rounds.append(group)
        self.all_indices.extend(group)
        self._members.update(group)


@dataclass
class BaselineConfig:
    """Settings for the comparison solvers"""
    k_hat: Optional[int] = None
    eta: float = 0.7
    adaptive_eta: bool = False
    ridge_lambda: float = 1e-3
    max_iter: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if self.k_hat is not None and int(self.k_hat) < 1:
            raise InvalidArgumentError(f"k_hat must be >= 1, got {self.k_hat}")
        if not self.eta > 0:
            raise InvalidArgumentError(f"eta must be > 0, got {self.eta}")
        if not self.ridge_lambda >= 0:
            raise InvalidArgumentError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if int(self.max_iter) < 1:
            raise InvalidArgumentError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be > 0, got {self.tol}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BaselineConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(frozen=True)
class SignalSpec:
    """Sparse ground-truth signal recipe"""
    kind: str
    k: int
    m: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise InvalidArgumentError(f"signal kind must be one of {SIGNAL_KINDS}, got {self.kind!r}")
        if not 1 <= self.k <= self.m:
            raise InvalidArgumentError(f"need 1 <= k <= m, got k={self.k}, m={self.m}")


@dataclass(frozen=True)
class NoiseSpec:
    """Additive measurement noise: uniform on [-level, level] or Gaussian with std level"""
    kind: str = "none"
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidArgumentError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.level < 0:
            raise InvalidArgumentError(f"noise level must be >= 0, got {self.level}")


@dataclass(frozen=True)
class MatrixSpec:
    """Where the design matrix of a plan comes from"""
    n: int
    m: int
    ensemble: str = "gaussian"
    path: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.ensemble not in ("gaussian", "file"):
            raise InvalidArgumentError(f"ensemble must be gaussian or file, got {self.ensemble!r}")
        if self.ensemble == "file" and not self.path:
            raise InvalidArgumentError("file ensemble needs a path")
        if self.ensemble == "gaussian" and (self.n < 1 or self.m < 1):
            raise InvalidArgumentError(f"n and m must be >= 1, got {self.n}x{self.m}")


@dataclass
class SolverSpec:
    """A registered solver name plus its parameters; label names the series in reports"""
    name: str
    params: Dict[str, Any] = field(default_factory=dict)
    label: Optional[str] = None

    def __post_init__(self):
        if self.label is None:
            self.label = self.name


@dataclass
class TrialRecord:
    """Outcome of one (solver, signal, k, trial) cell"""
    solver: str
    signal_kind: str
    k: int
    n: int
    m: int
    trial: int
    seed: int
    success: bool
    rel_error: float
    mse: float
    residual: float
    objective: float
    sparsity_out: int
    wall_ms: float = 0.0
    error: Optional[str] = None

    def __post_init__(self):
        if self.error is None and not self.mse >= 0:
            raise InvalidArgumentError(f"mse must be >= 0, got {self.mse}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrialRecord":
        data = dict(data)
        data["success"] = bool(data["success"])
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class ExperimentPlan:
    """A full sweep: matrix, signals, noise, solvers, k grid and trials per point"""
    name: str
    matrix: MatrixSpec
    solvers: List[SolverSpec]
    k_values: List[int]
    signal_kinds: List[str] = field(default_factory=lambda: ["zero_one"])
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    trials: int = 1
    base_seed: int = 0
    output_dir: Optional[str] = None
    workers: Optional[int] = None
    store: bool = False
    parquet: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidArgumentError(f"trials must be >= 1, got {self.trials}")
        if not self.solvers:
            raise InvalidArgumentError("plan needs at least one solver")
        if not self.k_values or min(self.k_values) < 1:
            raise InvalidArgumentError("k_values must be a non-empty list of positive integers")
        for kind in self.signal_kinds:
            if kind not in SIGNAL_KINDS:
                raise InvalidArgumentError(f"unknown signal kind {kind!r}")
        labels = [s.label for s in self.solvers]
        if len(set(labels)) != len(labels):
            raise InvalidArgumentError(f"solver labels must be unique, got {labels}")


@dataclass
class ClassifyReport:
    """Aggregate result of classifying a labeled test set"""
    solver: str
    accuracy: float
    mean_sparsity: float
    per_class_accuracy: Dict[Any, float]
    total_wall_ms: float
    n_samples: int
    n_correct: int
    n_failed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise InvalidArgumentError("report needs at least one sample")
        if self.accuracy != self.n_correct / self.n_samples:
            raise InvalidArgumentError("accuracy must equal n_correct / n_samples")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)




# SQL table creation statements
TRIALS_TABLE_SQL = """
CREATE TABLE IF NOT EXISTS trials (
    TrialId INTEGER PRIMARY KEY AUTOINCREMENT,
    Plan TEXT NOT NULL,
    Solver TEXT NOT NULL,
    SignalKind TEXT NOT NULL,
    K INTEGER NOT NULL CHECK (K >= 1),
    N INTEGER NOT NULL,
    M INTEGER NOT NULL,
    Trial INTEGER NOT NULL,
    Seed INTEGER NOT NULL,
    Success INTEGER NOT NULL CHECK (Success IN (0, 1)),
    RelError REAL,
    Mse REAL,
    Residual REAL,
    Objective REAL,
    SparsityOut INTEGER,
    WallMs REAL,
    Error TEXT,
    CreatedAt TIMESTAMP DEFAULT CURRENT_TIMESTAMP
);
"""

# Index creation statements for performance
TRIALS_INDICES_SQL = [
    "CREATE INDEX IF NOT EXISTS idx_trials_plan ON trials(Plan);",
    "CREATE INDEX IF NOT EXISTS idx_trials_solver_k ON trials(Solver, K);",
]

# TrialRecord field -> trials column
TRIAL_COLUMNS = {
    "solver": "Solver",
    "signal_kind": "SignalKind",
    "k": "K",
    "n": "N",
    "m": "M",
    "trial": "Trial",
    "seed": "Seed",
    "success": "Success",
    "rel_error": "RelError",
    "mse": "Mse",
    "residual": "Residual",
    "objective": "Objective",
    "sparsity_out": "SparsityOut",
    "wall_ms": "WallMs",
    "error": "Error",
}
