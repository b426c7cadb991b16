"""
Analytics Page - EPSR and decoding-time curves

This page reads stored sweeps from the trial store:
1. EPSR versus k per solver
2. Mean decoding time versus k
3. Per-cell statistics and failed trials
"""
import streamlit as st
import pandas as pd
from pathlib import Path
import sys

# Add utils to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from utils.charts import epsr_curve_figure, time_curve_figure
from utils.db import ensure_database, get_database_stats, get_trial_records, list_plans
from utils.harness import summarize


def main():
    """Main analytics page function"""

    st.set_page_config(
        page_title="Analytics - Sparse Recovery Bench",
        page_icon="📊",
        layout="wide"
    )

    ensure_database()

    st.title("📊 Recovery Analytics")
    st.markdown("*Empirical probability of successful reconstruction and decoding time*")

    plans = list_plans()
    if not plans:
        st.warning("No sweeps stored yet. Run a plan with `sweep --store` first.")
        display_database_summary()
        return

    plan = st.selectbox("Plan", plans, index=len(plans) - 1)
    records = get_trial_records(plan)
    summary = summarize(records)

    kinds = sorted(summary["signal_kind"].unique())
    kind = st.radio("Signal kind", kinds, horizontal=True) if len(kinds) > 1 else kinds[0]
    summary = summary[summary["signal_kind"] == kind]

    display_summary_metrics(summary)

    col1, col2 = st.columns([1, 1])
    with col1:
        st.plotly_chart(epsr_curve_figure(summary, kind))
    with col2:
        log_y = st.checkbox("Log time axis", value=True)
        st.plotly_chart(time_curve_figure(summary, log_y=log_y))

    st.header("📋 Per-cell Statistics")
    st.dataframe(summary.round(4), hide_index=True)

    display_failures(records)


def display_summary_metrics(summary: pd.DataFrame):
    """Display summary metrics at the top of the page"""

    st.header("📈 Summary Metrics")
    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("Solvers", summary["solver"].nunique())
    with col2:
        st.metric("Sparsity levels", summary["k"].nunique())
    with col3:
        st.metric("Trials per cell", int(summary["trials"].max()) if not summary.empty else 0)
    with col4:
        st.metric("Mean EPSR", f"{summary['epsr'].mean():.2f}" if not summary.empty else "-")


def display_failures(records):
    failed = pd.DataFrame([r.to_dict() for r in records if r.error])
    if failed.empty:
        return
    st.header("⚠️ Failed Trials")
    st.dataframe(failed[["solver", "signal_kind", "k", "trial", "seed", "error"]], hide_index=True)


def display_database_summary():
    """Show trial store stats when there is nothing to plot"""
    stats = get_database_stats()
    if "error" in stats:
        st.error(f"Database error: {stats['error']}")
    else:
        st.json(stats)


if __name__ == "__main__":
    main()
