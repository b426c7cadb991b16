"""
Data I/O utilities for matrices, experiment plans and result tables.
Handles the SPMX binary matrix container, CSV interchange, TOML plans and CSV/Parquet outputs.
"""
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger

from .errors import InvalidArgumentError, MatrixFormatError
from .schemas import (
    ClassifyReport,
    DesignMatrix,
    ExperimentPlan,
    MatrixSpec,
    NoiseSpec,
    SolverSpec,
    TrialRecord,
)

PathLike = Union[str, Path]

SPMX_MAGIC = b"SPMX"
SPMX_VERSION = 1
SPMX_HEADER = np.dtype([("magic", "S4"), ("version", "<u4"), ("n", "<u8"), ("m", "<u8")])

FLOAT_FORMAT = "%.12g"
TRIAL_CSV_COLUMNS = [
    "solver", "signal_kind", "k", "n", "m", "trial", "seed", "success",
    "rel_error", "mse", "residual", "objective", "sparsity_out", "error",
]


def write_spmx(matrix: Union[DesignMatrix, np.ndarray], path: PathLike) -> Path:
    """
    Write a matrix as SPMX: 24-byte header then n*m little-endian float64, column-major.

    Args:
        matrix: DesignMatrix or 2-D array
        path: destination file

    Returns:
        Path written
    """
    data = matrix.data if isinstance(matrix, DesignMatrix) else np.asarray(matrix, dtype=np.float64)
    if data.ndim != 2:
        raise InvalidArgumentError(f"SPMX holds 2-D matrices, got ndim={data.ndim}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.array([(SPMX_MAGIC, SPMX_VERSION, data.shape[0], data.shape[1])], dtype=SPMX_HEADER)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.asarray(data, dtype="<f8").tobytes(order="F"))
    return path


def read_spmx(path: PathLike) -> np.ndarray:
    """
    Read an SPMX file into a Fortran-ordered float64 array.

    Raises:
        MatrixFormatError: bad magic, unknown version or truncated payload
    """
    raw = Path(path).read_bytes()
    if len(raw) < SPMX_HEADER.itemsize:
        raise MatrixFormatError(f"{path}: file shorter than the SPMX header")
    header = np.frombuffer(raw, dtype=SPMX_HEADER, count=1)[0]
    if header["magic"] != SPMX_MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {bytes(header['magic'])!r}")
    if int(header["version"]) != SPMX_VERSION:
        raise MatrixFormatError(f"{path}: unsupported SPMX version {int(header['version'])}")
    n, m = int(header["n"]), int(header["m"])
    expected = n * m * 8
    payload = raw[SPMX_HEADER.itemsize:]
    if len(payload) != expected:
        raise MatrixFormatError(f"{path}: expected {expected} payload bytes for {n}x{m}, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return values.reshape((n, m), order="F")


def read_matrix_csv(path: PathLike) -> np.ndarray:
    """Plain numeric CSV without header; rows are measurements"""
    try:
        df = pd.read_csv(path, header=None)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise MatrixFormatError(f"{path}: {e}") from e
    try:
        return df.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise MatrixFormatError(f"{path}: non-numeric entries ({e})") from e


def read_array(path: PathLike) -> np.ndarray:
    """Read an SPMX or CSV matrix depending on the file suffix"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"matrix file not found: {path}")
    if path.suffix.lower() == ".csv":
        return read_matrix_csv(path)
    return read_spmx(path)


def load_matrix(path: PathLike) -> DesignMatrix:
    """Load a design matrix from SPMX (any suffix but .csv) or CSV"""
    A = DesignMatrix(read_array(path))
    logger.info(f"Loaded {A.n}x{A.m} matrix from {path}")
    return A


def read_labels(path: PathLike) -> pd.DataFrame:
    """
    Read the SRC sidecar CSV.

    Returns:
        DataFrame with columns: column_index, class_id, split (train or test), sorted by column_index
    """
    df = pd.read_csv(path)
    missing = {"column_index", "class_id"} - set(df.columns)
    if missing:
        raise InvalidArgumentError(f"{path}: missing label columns {sorted(missing)}")
    if "split" not in df.columns:
        df["split"] = "train"
    df["split"] = df["split"].astype(str).str.strip().str.lower()
    bad = set(df["split"]) - {"train", "test"}
    if bad:
        raise InvalidArgumentError(f"{path}: split must be train or test, found {sorted(bad)}")
    if df["column_index"].duplicated().any():
        raise InvalidArgumentError(f"{path}: duplicate column_index entries")
    return df.sort_values("column_index").reset_index(drop=True)


def plan_from_dict(data: Dict[str, Any]) -> ExperimentPlan:
    """Build an ExperimentPlan from the nested mapping of a TOML plan"""
    data = dict(data)
    try:
        matrix = MatrixSpec(**data.pop("matrix"))
        solvers = [
            SolverSpec(s["name"], dict(s.get("params", {})), s.get("label"))
            for s in data.pop("solvers")
        ]
    except KeyError as e:
        raise InvalidArgumentError(f"plan is missing required section {e}") from e
    noise = NoiseSpec(**data.pop("noise", {}))
    known = set(ExperimentPlan.__dataclass_fields__) - {"matrix", "solvers", "noise"}
    unknown = set(data) - known
    if unknown:
        raise InvalidArgumentError(f"unknown plan fields {sorted(unknown)}")
    return ExperimentPlan(matrix=matrix, solvers=solvers, noise=noise, **data)


def load_plan(path: PathLike) -> ExperimentPlan:
    """
    Load a sweep plan from TOML.

    Example:
        name = "desk"
        k_values = [10, 20, 30]
        trials = 50
        [matrix]
        n = 256
        m = 1024
        [noise]
        kind = "uniform"
        level = 0.01
        [[solvers]]
        name = "sgmp"
        params = { omega = 4 }
    """
    path = Path(path)
    with open(path, "rb") as f:
        data = tomllib.load(f)
    data.setdefault("name", path.stem)
    return plan_from_dict(data)


def records_frame(records: Sequence[TrialRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in records])


def epsr_curves(summary: pd.DataFrame) -> pd.DataFrame:
    """Plot-ready long format: solver, signal_kind, k, metric, value"""
    if summary.empty:
        return pd.DataFrame(columns=["solver", "signal_kind", "k", "metric", "value"])
    long = summary.melt(
        id_vars=["solver", "signal_kind", "k"],
        value_vars=["epsr", "mean_mse", "mean_wall_ms"],
        var_name="metric",
        value_name="value",
    )
    return long.sort_values(["metric", "solver", "signal_kind", "k"]).reset_index(drop=True)


def _write_csv(df: pd.DataFrame, path: Path) -> Path:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_plan_outputs(
    records: Sequence[TrialRecord],
    summary: pd.DataFrame,
    out_dir: PathLike,
    parquet: bool = False,
) -> Dict[str, Path]:
    """
    Write sweep outputs.

    trials.csv holds only deterministic fields, so reruns with the same seeds
    reproduce it byte for byte; wall times go to timings.csv.

    Returns:
        Mapping of output name to path
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    df = records_frame(records)
    if df.empty:
        df = pd.DataFrame(columns=TRIAL_CSV_COLUMNS + ["wall_ms"])

    paths = {
        "trials": _write_csv(df[TRIAL_CSV_COLUMNS], out_dir / "trials.csv"),
        "timings": _write_csv(
            df[["solver", "signal_kind", "k", "trial", "wall_ms"]], out_dir / "timings.csv"
        ),
        "epsr": _write_csv(summary, out_dir / "epsr.csv"),
        "curves": _write_csv(epsr_curves(summary), out_dir / "epsr_curves.csv"),
    }
    if parquet:
        paths["parquet"] = out_dir / "trials.parquet"
        df.to_parquet(paths["parquet"], engine="pyarrow", index=False)
    logger.info(f"Wrote {len(df)} trial rows to {out_dir}")
    return paths


def read_trials(path: PathLike) -> pd.DataFrame:
    """Read trials.csv or trials.parquet (a results directory picks whichever exists)"""
    path = Path(path)
    if path.is_dir():
        parquet = path / "trials.parquet"
        path = parquet if parquet.exists() else path / "trials.csv"
    if path.suffix == ".parquet":
        return pd.read_parquet(path, engine="pyarrow")
    return pd.read_csv(path)


def write_batch_outputs(result, out_dir: PathLike) -> Dict[str, Path]:
    """
    Write batch.csv (signal_id, support_size, residual_norm, wall_ms) and
    solutions.csv (signal_id, atom_index, value).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = pd.DataFrame({
        "signal_id": np.arange(len(result.solutions)),
        "support_size": [x.nnz for x in result.solutions],
        "residual_norm": result.residual_norms,
        "wall_ms": result.wall_ms,
    })
    triples: List[Dict[str, Any]] = [
        {"signal_id": i, "atom_index": int(j), "value": float(v)}
        for i, x in enumerate(result.solutions)
        for j, v in zip(x.support, x.values)
    ]
    solutions = pd.DataFrame(triples, columns=["signal_id", "atom_index", "value"])
    paths = {
        "batch": _write_csv(summary, out_dir / "batch.csv"),
        "solutions": _write_csv(solutions, out_dir / "solutions.csv"),
    }
    logger.info(f"Wrote batch outputs for {len(result.solutions)} signals to {out_dir}")
    return paths


def write_classify_outputs(
    report: ClassifyReport, predictions: pd.DataFrame, out_dir: PathLike, tag: Optional[str] = None
) -> Dict[str, Path]:
    """Write the report (one row, per-class accuracies flattened) and per-sample predictions"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = tag or report.solver
    row = {k: v for k, v in report.to_dict().items() if k != "per_class_accuracy"}
    for cls, acc in report.per_class_accuracy.items():
        row[f"accuracy_class_{cls}"] = acc
    paths = {
        "report": _write_csv(pd.DataFrame([row]), out_dir / f"classify_{tag}.csv"),
        "predictions": _write_csv(predictions, out_dir / f"predictions_{tag}.csv"),
    }
    logger.info(f"Classification outputs written to {out_dir}")
    return paths
