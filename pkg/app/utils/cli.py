"""
Command-line entry point: solve, sweep, nonrip, rip, batch and classify.
Every subcommand writes CSV into --out (default GMP_RESULTS_DIR/<subcommand>).
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger

from . import io
from .batch import decode_batch
from .config import configure_logging, get_settings
from .errors import InvalidArgumentError, SparseRecoveryError
from .gmp import write_trace_csv
from .harness import (
    SOLVER_NAMES,
    default_lambda,
    default_rho,
    derive_seed,
    estimate_rip,
    gen_matrix,
    gen_noise,
    gen_signal,
    nonrip_experiment,
    nonrip_objective_sweep,
    recovery_metrics,
    run_plan,
    run_solver,
)
from .schemas import (
    NOISE_KINDS,
    SIGNAL_KINDS,
    GmpConfig,
    NoiseSpec,
    SignalSpec,
    SolverSpec,
    StopRule,
)
from .src_classifier import (
    CLASSIFIER_SOLVERS,
    ClassifierConfig,
    LabeledDictionary,
    SparseRepresentationClassifier,
    downsample,
    split_train_test,
    synthetic_subspace_dataset,
)


def _out_dir(args: argparse.Namespace, name: str) -> Path:
    out = Path(args.out) if args.out else get_settings().results_dir / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _solver_params(args: argparse.Namespace) -> dict:
    params = {}
    for key in ("rho", "omega", "epsilon", "max_atoms", "k_hat", "max_outer", "max_inner", "rounding"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if args.lam is not None:
        params["lambda"] = args.lam if args.lam == "default" else float(args.lam)
    if args.stop:
        params["stops"] = list(args.stop)
    if args.no_debias:
        params["debias"] = False
    return params


def _add_solver_knobs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rho", type=int, help="atoms added per outer step (default: ceil(n / (4 ln m)))")
    p.add_argument("--rounding", choices=["ceil", "round"], help="rounding of the default rho")
    p.add_argument("--omega", type=int, help="exploration factor for sgmp/bgmp")
    p.add_argument("--lam", help="l1 weight: a number or 'default' (0.005 ||A^T b||_inf)")
    p.add_argument("--epsilon", type=float, help="relative objective-decrease stop")
    p.add_argument("--max-atoms", type=int, dest="max_atoms")
    p.add_argument("--max-outer", type=int, dest="max_outer")
    p.add_argument("--max-inner", type=int, dest="max_inner")
    p.add_argument("--k-hat", type=int, dest="k_hat", help="sparsity budget for omp/sp/ompr/niht/bomp")
    p.add_argument("--stop", action="append", help="stop rule kind:threshold (repeatable)")
    p.add_argument("--no-debias", action="store_true", help="keep raw l1 coefficients")


def cmd_solve(args: argparse.Namespace) -> int:
    A = io.load_matrix(args.matrix) if args.matrix else gen_matrix(args.n, args.m, args.seed)
    signal = SignalSpec(args.signal, args.k, A.m, derive_seed(args.seed, args.signal, args.k, 0))
    x_true = gen_signal(signal)
    b = A.data[:, x_true.support] @ x_true.values + gen_noise(
        NoiseSpec(args.noise, args.noise_level), A.n, derive_seed(signal.seed, "noise")
    )
    spec = SolverSpec(args.solver, _solver_params(args))
    x, trace = run_solver(spec, A, b, args.k)
    metrics = recovery_metrics(A, b, x, x_true)

    out = _out_dir(args, "solve")
    pd.DataFrame({"atom_index": x.support, "value": x.values}).to_csv(
        out / "solution.csv", index=False, float_format=io.FLOAT_FORMAT
    )
    pd.DataFrame([{"solver": args.solver, "k": args.k, "sparsity_out": x.nnz, **metrics}]).to_csv(
        out / "metrics.csv", index=False, float_format=io.FLOAT_FORMAT
    )
    if trace is not None:
        write_trace_csv(trace, out / "trace.csv")
    logger.info(
        f"{args.solver}: rel_error={metrics['rel_error']:.3e} residual={metrics['residual']:.3e} "
        f"nnz={x.nnz} stop={x.meta.get('stop_reason', '-')}"
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    plan = io.load_plan(args.plan)
    if args.out:
        plan.output_dir = args.out
    if args.workers:
        plan.workers = args.workers
    plan.store = plan.store or args.store
    plan.parquet = plan.parquet or args.parquet
    report = run_plan(plan)
    for name, path in report.paths.items():
        logger.info(f"{name}: {path}")
    return 0


def cmd_nonrip(args: argparse.Namespace) -> int:
    out = _out_dir(args, "nonrip")
    if args.k_values:
        frame = nonrip_objective_sweep(args.n, args.m, args.k_values, args.seed)
        frame.to_csv(out / "nonrip_objective.csv", index=False, float_format=io.FLOAT_FORMAT)
        logger.info(f"Objective sweep over k={args.k_values} written to {out}")
        return 0
    result = nonrip_experiment(args.n, args.m, args.dup, args.seed)
    result.frame.to_csv(out / "nonrip.csv", index=False, float_format=io.FLOAT_FORMAT)
    for name, trace in result.traces.items():
        write_trace_csv(trace, out / f"trace_{name}.csv")
    return 0


def cmd_rip(args: argparse.Namespace) -> int:
    A = io.load_matrix(args.matrix) if args.matrix else gen_matrix(args.n, args.m, args.seed)
    rows = [estimate_rip(A, k, normalize=not args.no_normalize).to_dict() for k in args.k]
    frame = pd.DataFrame(rows)
    out = _out_dir(args, "rip")
    frame.to_csv(out / "rip.csv", index=False, float_format=io.FLOAT_FORMAT)
    logger.info(f"\n{frame.to_string(index=False)}")
    return 0


def cmd_batch(args: argparse.Namespace) -> int:
    A = io.load_matrix(args.matrix)
    B = io.read_array(args.signals)
    rho = args.rho or default_rho(A.n, A.m)
    lam = 0.0
    if args.lam == "default":
        lam = float(np.median([default_lambda(A, B[:, j]) for j in range(B.shape[1])]))
    elif args.lam is not None:
        lam = float(args.lam)
    cfg = GmpConfig(rho=rho, omega=args.omega or 1, lam=lam, epsilon=args.epsilon or 1e-5,
                    max_atoms=args.max_atoms)
    stops = [StopRule.parse(s) for s in args.stop] if args.stop else None
    result = decode_batch(A, B, args.solver, cfg, stops, k=args.k, workers=args.workers or get_settings().workers)
    io.write_batch_outputs(result, _out_dir(args, "batch"))
    logger.info(f"Total correlation flops: {result.total_flops().total}")
    return 0


def _classification_data(args: argparse.Namespace):
    if args.synthetic:
        return synthetic_subspace_dataset(duplicate_frac=args.duplicate_frac, seed=args.seed)
    if not args.data or not args.labels:
        raise InvalidArgumentError("classify needs --data and --labels, or --synthetic")
    X = io.read_array(args.data)
    if args.rate < 1:
        if not args.shape:
            raise InvalidArgumentError("--rate below 1 needs --shape H W")
        X = downsample(X, tuple(args.shape), args.rate)
    labels = io.read_labels(args.labels)
    if len(labels) != X.shape[1]:
        raise InvalidArgumentError(f"{len(labels)} labels for {X.shape[1]} columns")
    cols = labels["column_index"].to_numpy()
    y = labels["class_id"].to_numpy()
    if args.train_frac is not None:
        return split_train_test(X[:, cols], y, args.train_frac, args.seed)
    train = (labels["split"] == "train").to_numpy()
    return X[:, cols[train]], y[train], X[:, cols[~train]], y[~train]


def cmd_classify(args: argparse.Namespace) -> int:
    X_train, y_train, X_test, y_test = _classification_data(args)
    dictionary = LabeledDictionary.from_columns(X_train, y_train)
    cfg = ClassifierConfig(workers=args.workers or get_settings().workers)
    out = _out_dir(args, "classify")
    rows = []
    for solver in args.solver:
        report, predictions = SparseRepresentationClassifier(dictionary, solver, cfg).evaluate(X_test, y_test)
        io.write_classify_outputs(report, predictions, out)
        rows.append({k: v for k, v in report.to_dict().items() if k != "per_class_accuracy"})
    pd.DataFrame(rows).to_csv(out / "classify_summary.csv", index=False, float_format=io.FLOAT_FORMAT)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse_bench", description="Sparse recovery solvers and benchmarks")
    parser.add_argument("--verbose", "-v", action="store_true", help="DEBUG logging")
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="recover one synthetic signal with one solver")
    p.add_argument("--solver", choices=SOLVER_NAMES, default="gmp")
    p.add_argument("--matrix", help="SPMX or CSV design matrix (default: Gaussian n x m)")
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--m", type=int, default=1024)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--signal", choices=SIGNAL_KINDS, default="zero_one")
    p.add_argument("--noise", choices=NOISE_KINDS, default="none")
    p.add_argument("--noise-level", type=float, default=0.01, dest="noise_level")
    p.add_argument("--seed", type=int, default=0)
    _add_solver_knobs(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run an experiment plan (TOML)")
    p.add_argument("plan")
    p.add_argument("--workers", type=int)
    p.add_argument("--store", action="store_true", help="append trials to the SQLite store")
    p.add_argument("--parquet", action="store_true", help="also write trials.parquet")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("nonrip", help="duplicated-column stress test")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--m", type=int, default=512)
    p.add_argument("--dup", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-values", type=_int_list, dest="k_values",
                   help="instead: final objective on Gaussian A for these large k")
    p.set_defaults(func=cmd_nonrip)

    p = sub.add_parser("rip", help="brute-force restricted isometry constants")
    p.add_argument("--matrix")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--m", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=_int_list, default=[1, 2, 3])
    p.add_argument("--no-normalize", action="store_true", dest="no_normalize")
    p.set_defaults(func=cmd_rip)

    p = sub.add_parser("batch", help="decode many signals with one Gram cache")
    p.add_argument("--matrix", required=True)
    p.add_argument("--signals", required=True, help="SPMX/CSV matrix, one signal per column")
    p.add_argument("--solver", choices=["bgmp", "bomp"], default="bgmp")
    p.add_argument("--k", type=int, default=200, help="bomp atom budget")
    p.add_argument("--workers", type=int)
    p.add_argument("--rho", type=int)
    p.add_argument("--omega", type=int)
    p.add_argument("--lam")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-atoms", type=int, dest="max_atoms")
    p.add_argument("--stop", action="append")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("classify", help="sparse-representation classification")
    p.add_argument("--data", help="SPMX/CSV matrix of vectorized samples (columns)")
    p.add_argument("--labels", help="CSV with column_index, class_id, split")
    p.add_argument("--solver", nargs="+", choices=CLASSIFIER_SOLVERS, default=["bgmp"])
    p.add_argument("--rate", type=float, default=1.0, help="downsampling rate in (0, 1]")
    p.add_argument("--shape", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--train-frac", type=float, dest="train_frac")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synthetic", action="store_true", help="use the built-in subspace dataset")
    p.add_argument("--duplicate-frac", type=float, default=0.0, dest="duplicate_frac")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging("DEBUG" if args.verbose else None)
    try:
        return args.func(args)
    except (SparseRecoveryError, FileNotFoundError) as e:
        logger.error(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
