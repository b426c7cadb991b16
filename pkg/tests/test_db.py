"""
Trial store round trips against a throwaway SQLite file under GMP_STATE_DIR.
"""
import math

import pytest

from utils.db import (
    delete_plan,
    ensure_database,
    get_database_stats,
    get_db_path,
    get_trial_records,
    get_trials,
    init_database,
    insert_trials,
    list_plans,
)
from utils.schemas import TrialRecord


def make_record(solver="gmp", k=4, trial=0, success=True, error=None):
    return TrialRecord(
        solver=solver, signal_kind="zero_one", k=k, n=64, m=256, trial=trial, seed=2**62 + trial,
        success=success, rel_error=1e-9 if success else 0.4, mse=1e-20 if success else 0.01,
        residual=1e-8, objective=5e-17, sparsity_out=k, wall_ms=3.25, error=error,
    )


def test_database_lives_in_state_dir(tmp_path):
    assert get_db_path() == tmp_path / "state" / "trials.sqlite"


def test_stats_on_empty_store():
    ensure_database()
    stats = get_database_stats()
    assert stats["total_trials"] == 0
    assert stats["plans"] == 0
    assert stats["database_exists"] is True


def test_init_is_idempotent():
    init_database()
    init_database()
    assert list_plans() == []


def test_insert_and_query():
    records = [make_record(trial=t, success=t % 2 == 0) for t in range(4)]
    assert insert_trials("desk", records) == 4
    df = get_trials("desk")
    assert len(df) == 4
    assert {"plan", "trial_id", "created_at", "solver", "success"} <= set(df.columns)
    assert df["success"].tolist() == [True, False, True, False]
    assert df["seed"].tolist() == [2**62 + t for t in range(4)]


def test_records_round_trip():
    original = [make_record(solver="sgmp", k=8, trial=1), make_record(solver="omp", k=8, trial=0, success=False)]
    insert_trials("rt", original)
    loaded = get_trial_records("rt")
    assert [r.solver for r in loaded] == ["sgmp", "omp"]
    assert loaded[0].success is True and loaded[1].success is False
    assert loaded[0].wall_ms == pytest.approx(3.25)
    assert loaded[1].rel_error == pytest.approx(0.4)


def test_failed_trials_counted():
    failed = TrialRecord(
        solver="niht", signal_kind="gaussian", k=30, n=64, m=256, trial=0, seed=1, success=False,
        rel_error=math.nan, mse=math.nan, residual=math.nan, objective=math.nan, sparsity_out=0,
        error="SolverDivergedError: non-finite objective",
    )
    insert_trials("fail", [failed, make_record()])
    stats = get_database_stats()
    assert stats["failed_trials"] == 1
    assert stats["solvers"] == 2
    record = get_trial_records("fail")[0]
    assert record.error.startswith("SolverDivergedError")


def test_plans_listed_in_insert_order_and_deleted():
    insert_trials("first", [make_record()])
    insert_trials("second", [make_record(), make_record(trial=1)])
    assert list_plans() == ["first", "second"]
    assert delete_plan("second") == 2
    assert list_plans() == ["first"]
    assert get_trials("second").empty


def test_all_plans_query():
    insert_trials("a", [make_record()])
    insert_trials("b", [make_record(solver="sp")])
    df = get_trials()
    assert sorted(df["plan"].unique().tolist()) == ["a", "b"]
