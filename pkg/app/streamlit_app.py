"""
Sparse Recovery Bench - Main Streamlit Application

Dashboard over the trial store: what has been run, and where to look next.
Sweeps are launched from the CLI (`sweep --store`); this app only reads.
"""
import streamlit as st
import pandas as pd
from pathlib import Path

# Add utils to path for imports
import sys
sys.path.append(str(Path(__file__).parent))

from utils.config import get_settings
from utils.db import ensure_database, get_database_stats, get_trials, list_plans
from utils.harness import SOLVER_NAMES


def main():
    """Main application entry point"""

    st.set_page_config(
        page_title="Sparse Recovery Bench",
        page_icon="🧮",
        layout="wide",
        initial_sidebar_state="expanded"
    )

    ensure_database()

    st.title("🧮 Sparse Recovery Bench")
    st.markdown("*Greedy and convex sparse recovery: GMP, SGMP, batch mode and baselines*")

    with st.sidebar:
        st.header("📊 Trial Store")
        db_stats = get_database_stats()
        if "error" not in db_stats:
            st.metric("Stored Trials", db_stats.get("total_trials", 0))
            st.metric("Plans", db_stats.get("plans", 0))
            st.metric("Failed Trials", db_stats.get("failed_trials", 0))
        else:
            st.error(f"Database error: {db_stats['error']}")
        st.caption(f"`{db_stats['database_path']}`")

        st.subheader("Settings")
        st.json(get_settings().to_dict())

    col1, col2 = st.columns(2)

    with col1:
        st.subheader("How to Use")
        st.markdown("""
        1. **Solve** - recover one synthetic signal and inspect the objective trace
        2. **Sweep** - run a TOML plan from the CLI with `--store`
        3. **Analytics** - compare EPSR and decoding time across solvers
        """)
        if st.button("🚀 Open Solve Page", type="primary"):
            st.switch_page("pages/1_Solve.py")

    with col2:
        st.subheader("Registered Solvers")
        st.write(", ".join(f"`{name}`" for name in SOLVER_NAMES))

    plans = list_plans()
    st.header("📋 Stored Plans")
    if not plans:
        st.info("No sweeps stored yet. Run `python scripts/sparse_bench.py sweep plan.toml --store`.")
        return

    overview = []
    for plan in plans:
        df = get_trials(plan)
        overview.append({
            "plan": plan,
            "trials": len(df),
            "solvers": df["solver"].nunique(),
            "k range": f"{df['k'].min()}-{df['k'].max()}",
            "matrix": f"{df['n'].iloc[0]}x{df['m'].iloc[0]}",
            "success rate": df["success"].mean(),
        })
    st.dataframe(pd.DataFrame(overview), hide_index=True)


if __name__ == "__main__":
    main()
