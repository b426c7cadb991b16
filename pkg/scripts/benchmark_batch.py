"""
Batch-mode speedup report.

Decodes the same batch of Gaussian signals with plain GMP (one correlation
pass over A per outer step) and with BGMP/BOMP over a shared Gram cache, then
prints wall time, correlation flops and per-signal agreement.

Usage:
    python scripts/benchmark_batch.py --n 512 --m 2048 --signals 200 --k 60
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

# Add the app directory to the path so we can import utils
app_dir = Path(__file__).resolve().parent.parent / "app"
sys.path.append(str(app_dir))

from utils.batch import build_gram, decode_batch, merge_flops
from utils.config import configure_logging, get_settings
from utils.core import FlopCounter
from utils.gmp import gmp_solve
from utils.harness import default_rho, derive_seed, gen_matrix, gen_noise, gen_signal
from utils.schemas import GmpConfig, NoiseSpec, SignalSpec


def make_batch(A, count: int, k: int, seed: int, sigma: float) -> np.ndarray:
    """Gaussian k-sparse signals plus N(0, sigma^2) noise, one per column"""
    columns = []
    for i in range(count):
        x = gen_signal(SignalSpec("gaussian", k, A.m, derive_seed(seed, "batch", k, i)))
        noise = gen_noise(NoiseSpec("gaussian", sigma), A.n, derive_seed(seed, "batch-noise", i))
        columns.append(A.data[:, x.support] @ x.values + noise)
    return np.column_stack(columns)


def main():
    parser = argparse.ArgumentParser(description="BGMP vs GMP vs BOMP timing")
    parser.add_argument("--n", type=int, default=512)
    parser.add_argument("--m", type=int, default=2048)
    parser.add_argument("--signals", type=int, default=200)
    parser.add_argument("--k", type=int, default=60)
    parser.add_argument("--sigma", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="CSV path for the report")
    args = parser.parse_args()
    configure_logging()

    A = gen_matrix(args.n, args.m, args.seed)
    B = make_batch(A, args.signals, args.k, args.seed, args.sigma)
    cfg = GmpConfig(rho=default_rho(A.n, A.m), max_atoms=args.k)

    started = time.perf_counter()
    plain, plain_flops = [], []
    for j in range(B.shape[1]):
        counter = FlopCounter()
        x, _ = gmp_solve(A, B[:, j], cfg, flops=counter)
        plain.append(x)
        plain_flops.append(counter)
    gmp_ms = 1e3 * (time.perf_counter() - started)

    started = time.perf_counter()
    cache = build_gram(A, get_settings().gram_cap)
    build_ms = 1e3 * (time.perf_counter() - started)

    # both batch totals include the Gram build
    started = time.perf_counter()
    bgmp = decode_batch(A, B, "bgmp", cfg, cache=cache)
    bgmp_ms = 1e3 * (time.perf_counter() - started) + build_ms

    started = time.perf_counter()
    bomp = decode_batch(A, B, "bomp", k=args.k, cache=cache)
    bomp_ms = 1e3 * (time.perf_counter() - started) + build_ms

    same_support = sum(
        np.array_equal(p.support, q.support) for p, q in zip(plain, bgmp.solutions)
    )
    report = pd.DataFrame([
        {"solver": "gmp", "total_ms": gmp_ms, "flops": merge_flops(plain_flops).total},
        {"solver": "bgmp", "total_ms": bgmp_ms, "flops": bgmp.total_flops().total + bgmp.build_flops},
        {"solver": "bomp", "total_ms": bomp_ms, "flops": bomp.total_flops().total + bomp.build_flops},
    ])
    report["speedup_vs_gmp"] = gmp_ms / report["total_ms"]

    logger.info(f"\n{report.to_string(index=False)}")
    logger.info(f"BGMP support matches GMP on {same_support}/{B.shape[1]} signals")
    if args.out:
        report.to_csv(args.out, index=False, float_format="%.6g")


if __name__ == "__main__":
    main()
