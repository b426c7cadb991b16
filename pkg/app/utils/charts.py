"""
Chart generation utilities using Plotly for the sparse recovery dashboard.
Creates EPSR / decoding-time curves, objective traces and coefficient plots.
"""
from typing import Optional

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from .schemas import SolveTrace, SparseSolution

LAYOUT = dict(height=400, margin=dict(l=50, r=50, t=50, b=50))


def _empty_figure(message: str) -> go.Figure:
    fig = go.Figure()
    fig.add_annotation(text=message, x=0.5, y=0.5, xref="paper", yref="paper",
                       showarrow=False, font_size=16)
    return fig


def epsr_curve_figure(summary: pd.DataFrame, signal_kind: Optional[str] = None) -> go.Figure:
    """
    EPSR versus sparsity k, one line per solver.

    Args:
        summary: frame from harness.summarize (solver, signal_kind, k, epsr, ...)
        signal_kind: restrict to one signal family

    Returns:
        Plotly figure object
    """
    if summary.empty:
        return _empty_figure("No trials available")
    data = summary if signal_kind is None else summary[summary["signal_kind"] == signal_kind]
    if data.empty:
        return _empty_figure(f"No trials for signal kind: {signal_kind}")

    fig = px.line(data.sort_values("k"), x="k", y="epsr", color="solver", markers=True,
                  line_dash="signal_kind" if signal_kind is None else None)
    fig.update_layout(
        title="Empirical probability of successful reconstruction",
        xaxis_title="Sparsity k",
        yaxis_title="EPSR",
        yaxis=dict(range=[-0.02, 1.02]),
        hovermode="x unified",
        **LAYOUT,
    )
    return fig


def time_curve_figure(summary: pd.DataFrame, log_y: bool = True) -> go.Figure:
    """Mean decoding time (ms) versus k, one line per solver"""
    if summary.empty:
        return _empty_figure("No timing data available")
    fig = px.line(summary.sort_values("k"), x="k", y="mean_wall_ms", color="solver",
                  markers=True, log_y=log_y)
    fig.update_layout(title="Mean decoding time", xaxis_title="Sparsity k",
                      yaxis_title="Time (ms)", **LAYOUT)
    return fig


def trace_figure(traces: dict, relative: bool = True) -> go.Figure:
    """
    Objective per outer iteration for one or more solve traces.

    Args:
        traces: mapping label -> SolveTrace
        relative: divide by the starting objective 0.5*||b||^2
    """
    traces = {k: v for k, v in traces.items() if v is not None and v.n_outer}
    if not traces:
        return _empty_figure("No outer iterations recorded")

    fig = go.Figure()
    for label, trace in traces.items():
        values = np.asarray(trace.objective_per_outer)
        if relative and trace.theta0 > 0:
            values = values / trace.theta0
        fig.add_trace(go.Scatter(
            x=np.arange(1, values.size + 1),
            y=values,
            mode="lines+markers",
            name=label,
            marker=dict(size=4),
        ))
    fig.update_layout(
        title="Objective per outer iteration",
        xaxis_title="Outer iteration",
        yaxis_title="f / f(0)" if relative else "f",
        yaxis_type="log",
        **LAYOUT,
    )
    return fig


def coefficient_figure(x_rec: SparseSolution, x_true: Optional[SparseSolution] = None) -> go.Figure:
    """Stem-style comparison of recovered and true coefficients over the atom index"""
    if x_rec.nnz == 0 and (x_true is None or x_true.nnz == 0):
        return _empty_figure("Both solutions are empty")

    fig = go.Figure()
    if x_true is not None:
        fig.add_trace(go.Scatter(
            x=x_true.support, y=x_true.values, mode="markers", name="true",
            marker=dict(symbol="circle-open", size=10, color="gray"),
        ))
    fig.add_trace(go.Scatter(
        x=x_rec.support, y=x_rec.values, mode="markers", name="recovered",
        marker=dict(symbol="x", size=7, color="red"),
    ))
    fig.update_layout(title="Coefficients", xaxis_title="Atom index",
                      yaxis_title="Value", xaxis=dict(range=[-1, x_rec.m]), **LAYOUT)
    return fig


def accuracy_figure(reports: pd.DataFrame) -> go.Figure:
    """Classification accuracy per solver, bars annotated with mean sparsity"""
    if reports.empty:
        return _empty_figure("No classification results available")
    fig = go.Figure()
    fig.add_trace(go.Bar(
        x=reports["solver"],
        y=reports["accuracy"],
        text=[f"sparsity {s:.0f}" for s in reports["mean_sparsity"]],
        textposition="auto",
        marker=dict(color="lightblue"),
    ))
    fig.update_layout(title="Classification accuracy", xaxis_title="Solver",
                      yaxis_title="Accuracy", yaxis=dict(range=[0, 1]), showlegend=False, **LAYOUT)
    return fig
