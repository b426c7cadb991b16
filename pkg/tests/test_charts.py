import numpy as np
import pandas as pd

from utils.charts import (
    accuracy_figure,
    coefficient_figure,
    epsr_curve_figure,
    time_curve_figure,
    trace_figure,
)
from utils.schemas import SolveTrace, SparseSolution


def summary_frame():
    return pd.DataFrame({
        "solver": ["gmp", "gmp", "omp", "omp"],
        "signal_kind": ["zero_one", "gaussian", "zero_one", "gaussian"],
        "k": [10, 10, 10, 10],
        "trials": [5, 5, 5, 5],
        "epsr": [1.0, 0.8, 0.6, 0.4],
        "mean_mse": [0.0, 0.1, 0.2, 0.3],
        "mean_wall_ms": [1.0, 2.0, 3.0, 4.0],
        "failures": [0, 0, 0, 0],
    })


def is_placeholder(fig) -> bool:
    return len(fig.data) == 0 and len(fig.layout.annotations) == 1


def test_empty_inputs_give_placeholders():
    assert is_placeholder(epsr_curve_figure(pd.DataFrame()))
    assert is_placeholder(time_curve_figure(pd.DataFrame()))
    assert is_placeholder(trace_figure({}))
    assert is_placeholder(trace_figure({"gmp": None}))
    assert is_placeholder(coefficient_figure(SparseSolution.empty(5)))
    assert is_placeholder(accuracy_figure(pd.DataFrame()))


def test_epsr_curve_one_line_per_solver():
    fig = epsr_curve_figure(summary_frame(), "zero_one")
    assert {trace.name for trace in fig.data} == {"gmp", "omp"}
    assert is_placeholder(epsr_curve_figure(summary_frame(), "uniform"))


def test_time_curve_axis():
    fig = time_curve_figure(summary_frame(), log_y=False)
    assert fig.layout.yaxis.type != "log"
    assert len(fig.data) >= 2


def test_trace_relative_values():
    trace = SolveTrace(theta0=4.0)
    trace.record(2.0, 1, 3, 0.0, [0])
    trace.record(1.0, 2, 3, 0.0, [1])
    fig = trace_figure({"gmp": trace})
    np.testing.assert_allclose(fig.data[0].y, [0.5, 0.25])
    raw = trace_figure({"gmp": trace}, relative=False)
    np.testing.assert_allclose(raw.data[0].y, [2.0, 1.0])


def test_coefficient_figure_layers():
    x_true = SparseSolution([1, 4], [1.0, -1.0], 6)
    fig = coefficient_figure(SparseSolution([1], [0.9], 6), x_true)
    assert [trace.name for trace in fig.data] == ["true", "recovered"]


def test_accuracy_bars():
    reports = pd.DataFrame({"solver": ["bgmp", "l2"], "accuracy": [0.97, 0.9], "mean_sparsity": [42.0, 600.0]})
    fig = accuracy_figure(reports)
    assert list(fig.data[0].x) == ["bgmp", "l2"]
    assert fig.data[0].text[1] == "sparsity 600"
