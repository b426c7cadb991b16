"""
Database utilities for the SQLite trial store.
Handles database initialization, connection management and trial inserts/queries.
"""
import sqlite3
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from loguru import logger

from .config import get_settings
from .schemas import TRIAL_COLUMNS, TRIALS_INDICES_SQL, TRIALS_TABLE_SQL, TrialRecord

DB_NAME = "trials.sqlite"


def get_db_path() -> Path:
    """Get database path under GMP_STATE_DIR and ensure the directory exists"""
    path = get_settings().state_dir / DB_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


@contextmanager
def get_connection():
    """Get a database connection with proper cleanup"""
    conn = None
    try:
        conn = sqlite3.connect(str(get_db_path()))
        conn.row_factory = sqlite3.Row
        yield conn
    finally:
        if conn:
            conn.close()


def init_database():
    """Create the trials table and its indices if they don't exist"""
    with get_connection() as conn:
        cursor = conn.cursor()
        try:
            cursor.execute(TRIALS_TABLE_SQL)
            for index_sql in TRIALS_INDICES_SQL:
                cursor.execute(index_sql)
            conn.commit()
        except sqlite3.Error as e:
            logger.error(f"Error initializing database: {e}")
            conn.rollback()
            raise


def insert_trials(plan: str, records: Sequence[TrialRecord]) -> int:
    """
    Append trial records under a plan name.

    Returns:
        Number of rows inserted
    """
    ensure_database()
    fields = list(TRIAL_COLUMNS)
    columns = ", ".join(["Plan"] + [TRIAL_COLUMNS[f] for f in fields])
    placeholders = ", ".join("?" for _ in range(len(fields) + 1))
    rows = []
    for record in records:
        data = record.to_dict()
        data["success"] = int(bool(data["success"]))
        rows.append([plan] + [data[f] for f in fields])

    with get_connection() as conn:
        conn.executemany(f"INSERT INTO trials ({columns}) VALUES ({placeholders})", rows)
        conn.commit()
    logger.info(f"Stored {len(rows)} trials for plan {plan!r} in {get_db_path()}")
    return len(rows)


def get_trials(plan: Optional[str] = None) -> pd.DataFrame:
    """
    Load stored trials, optionally for one plan.

    Returns:
        DataFrame with a plan column plus the TrialRecord fields (snake_case)
    """
    ensure_database()
    query = "SELECT * FROM trials"
    params: tuple = ()
    if plan is not None:
        query += " WHERE Plan = ?"
        params = (plan,)
    query += " ORDER BY TrialId"
    with get_connection() as conn:
        df = pd.read_sql_query(query, conn, params=params)

    rename = {v: k for k, v in TRIAL_COLUMNS.items()}
    rename.update({"Plan": "plan", "TrialId": "trial_id", "CreatedAt": "created_at"})
    df = df.rename(columns=rename)
    if "success" in df.columns:
        df["success"] = df["success"].astype(bool)
    return df


def get_trial_records(plan: str) -> List[TrialRecord]:
    """Stored trials of one plan as TrialRecord objects"""
    df = get_trials(plan)
    return [TrialRecord.from_dict(row) for row in df.to_dict(orient="records")]


def list_plans() -> List[str]:
    """Plan names in the store, oldest first"""
    ensure_database()
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute("SELECT Plan, MIN(TrialId) AS first FROM trials GROUP BY Plan ORDER BY first")
        return [row["Plan"] for row in cursor.fetchall()]


def delete_plan(plan: str) -> int:
    """Remove every trial of a plan; returns the number of rows deleted"""
    ensure_database()
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute("DELETE FROM trials WHERE Plan = ?", (plan,))
        conn.commit()
        return cursor.rowcount


def get_database_stats() -> Dict[str, Any]:
    """
    Get basic database statistics for monitoring.

    Returns:
        Dictionary with database stats, or an "error" entry when the store cannot be read
    """
    try:
        with get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("SELECT COUNT(*) FROM trials")
            total_trials = cursor.fetchone()[0]
            cursor.execute("SELECT COUNT(DISTINCT Plan) FROM trials")
            plans = cursor.fetchone()[0]
            cursor.execute("SELECT COUNT(DISTINCT Solver) FROM trials")
            solvers = cursor.fetchone()[0]
            cursor.execute("SELECT COUNT(*) FROM trials WHERE Error IS NOT NULL")
            failures = cursor.fetchone()[0]
            return {
                "total_trials": total_trials,
                "plans": plans,
                "solvers": solvers,
                "failed_trials": failures,
                "database_path": str(get_db_path()),
                "database_exists": get_db_path().exists(),
            }
    except sqlite3.Error as e:
        return {
            "error": str(e),
            "database_path": str(get_db_path()),
            "database_exists": get_db_path().exists(),
        }


def ensure_database():
    """Ensure database is initialized - call this before first use"""
    with get_connection() as conn:
        exists = conn.execute(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name = 'trials'"
        ).fetchone()
    if not exists:
        logger.info("Trial store not found, initializing...")
        init_database()
