"""
Solve Page - recover one synthetic signal

Pick the problem size, signal family and solver, then compare the recovered
coefficients with the ground truth and follow the objective per outer step.
"""
import streamlit as st
import pandas as pd
from pathlib import Path
import sys

# Add utils to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from utils.charts import coefficient_figure, trace_figure
from utils.core import matvec
from utils.errors import SparseRecoveryError
from utils.harness import (
    SOLVER_NAMES,
    default_rho,
    derive_seed,
    gen_matrix,
    gen_noise,
    gen_signal,
    recovery_metrics,
    run_solver,
)
from utils.schemas import NOISE_KINDS, SIGNAL_KINDS, NoiseSpec, SignalSpec, SolverSpec


@st.cache_data
def cached_matrix(n: int, m: int, seed: int):
    return gen_matrix(n, m, seed)


def solver_controls(name: str, n: int, m: int) -> dict:
    """Sidebar knobs for the chosen solver"""
    params = {}
    if name in ("gmp", "sgmp", "bgmp"):
        params["rho"] = st.number_input("rho", 1, m, min(default_rho(n, m), m), key=f"{name}_rho")
        if name != "gmp":
            params["omega"] = st.number_input("omega", 1, 16, 4 if name == "sgmp" else 1, key=f"{name}_omega")
        lam_mode = st.selectbox("lambda", ["0", "default", "custom"], key=f"{name}_lam")
        if lam_mode == "default":
            params["lambda"] = "default"
        elif lam_mode == "custom":
            params["lambda"] = st.number_input("lambda value", 0.0, value=0.01, format="%.6f", key=f"{name}_lam_value")
        params["epsilon"] = st.number_input("epsilon", 1e-12, 1.0, 1e-5, format="%.1e", key=f"{name}_eps")
    elif name in ("ompr", "ompra"):
        params["eta"] = st.slider("eta", 0.05, 1.0, 0.7, key=f"{name}_eta")
    elif name == "l2l2":
        params["ridge_lambda"] = st.number_input("ridge lambda", 0.0, value=1e-3, format="%.1e", key=f"{name}_ridge")
    if name in ("omp", "bomp", "sp", "ompr", "ompra", "niht"):
        factor = st.slider("k_hat / k", 1.0, 2.0, 1.2, 0.1, key=f"{name}_khat")
        params["k_hat_factor"] = factor
    return params


def main():
    """Main solve page function"""

    st.set_page_config(
        page_title="Solve - Sparse Recovery Bench",
        page_icon="🎯",
        layout="wide"
    )

    st.title("🎯 Single Solve")

    with st.sidebar:
        st.header("Problem")
        n = st.number_input("n (measurements)", 8, 2048, 256)
        m = st.number_input("m (atoms)", 8, 8192, 1024)
        k = st.number_input("k (sparsity)", 1, int(m), min(20, int(m)))
        kind = st.selectbox("Signal", SIGNAL_KINDS)
        noise_kind = st.selectbox("Noise", NOISE_KINDS, index=1)
        noise_level = st.number_input("Noise level", 0.0, value=0.01, format="%.4f")
        seed = st.number_input("Seed", 0, value=0)

        st.header("Solver")
        compare = st.multiselect("Solvers", SOLVER_NAMES, default=["gmp", "sgmp"])
        params = {}
        for name in compare:
            with st.expander(name):
                params[name] = solver_controls(name, int(n), int(m))

    if not compare:
        st.info("Choose at least one solver in the sidebar.")
        return

    A = cached_matrix(int(n), int(m), int(seed))
    signal = SignalSpec(kind, int(k), int(m), derive_seed(int(seed), kind, int(k), 0))
    x_true = gen_signal(signal)
    b = matvec(A, x_true) + gen_noise(NoiseSpec(noise_kind, noise_level), A.n, derive_seed(signal.seed, "noise"))

    rows, traces, solutions = [], {}, {}
    with st.spinner("Solving..."):
        for name in compare:
            try:
                x, trace = run_solver(SolverSpec(name, params[name]), A, b, int(k))
            except SparseRecoveryError as e:
                st.error(f"{name}: {e}")
                continue
            solutions[name] = x
            traces[name] = trace
            rows.append({
                "solver": name,
                "nnz": x.nnz,
                "stop": x.meta.get("stop_reason", "-"),
                "outer": trace.n_outer if trace is not None else None,
                **recovery_metrics(A, b, x, x_true),
            })

    if not rows:
        return

    st.header("📈 Results")
    results = pd.DataFrame(rows)
    cols = st.columns(len(rows))
    for col, row in zip(cols, rows):
        col.metric(row["solver"], f"{row['rel_error']:.2e}", "success" if row["success"] else "failed",
                   delta_color="normal" if row["success"] else "inverse")
    st.dataframe(results, hide_index=True)

    col1, col2 = st.columns([1, 1])
    with col1:
        st.plotly_chart(trace_figure(traces))
    with col2:
        shown = st.selectbox("Coefficients of", list(solutions))
        st.plotly_chart(coefficient_figure(solutions[shown], x_true))


if __name__ == "__main__":
    main()
