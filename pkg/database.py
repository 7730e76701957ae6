# database.py
# SQLite database operations for storing bench sweeps and rescoring runs

import sqlite3
from datetime import datetime

import pandas as pd

from config import BENCH_TABLE, DATABASE_NAME, RESCORE_TABLE


def init_database(db_path=DATABASE_NAME):
    """Initialize SQLite database and create tables if they don't exist"""
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    # One row per bench sweep row
    cursor.execute(f'''
        CREATE TABLE IF NOT EXISTS {BENCH_TABLE} (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_timestamp TEXT NOT NULL,
            archive TEXT,
            scorer TEXT,
            strategy TEXT NOT NULL,
            method TEXT,
            param REAL,
            mean_depth REAL,
            mean_loglik REAL,
            oracle_agreement REAL,
            hypotheses_scored INTEGER,
            scorer_calls INTEGER,
            wall_time REAL,
            created_at TEXT DEFAULT CURRENT_TIMESTAMP
        )
    ''')

    # One row per rescored utterance
    cursor.execute(f'''
        CREATE TABLE IF NOT EXISTS {RESCORE_TABLE} (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_timestamp TEXT NOT NULL,
            archive TEXT,
            scorer TEXT,
            utt_id TEXT NOT NULL,
            strategy TEXT NOT NULL,
            best_words TEXT,
            best_cost REAL,
            depth REAL,
            num_states INTEGER,
            hypotheses_scored INTEGER,
            scorer_calls INTEGER,
            created_at TEXT DEFAULT CURRENT_TIMESTAMP
        )
    ''')

    conn.commit()
    conn.close()


def _timestamp(run_timestamp):
    return run_timestamp or datetime.now().strftime('%Y-%m-%d %H:%M:%S')


def save_bench_results(df, archive="", scorer="", run_timestamp=None, db_path=DATABASE_NAME):
    """
    Save a run_bench() DataFrame
    Returns: (run timestamp, number of rows saved)
    """
    run_timestamp = _timestamp(run_timestamp)
    if df.empty:
        return run_timestamp, 0

    records = df.copy()
    if "wall_time" not in records.columns:
        records["wall_time"] = None
    records.insert(0, "scorer", scorer)
    records.insert(0, "archive", archive)
    records.insert(0, "run_timestamp", run_timestamp)

    conn = sqlite3.connect(db_path)
    records.to_sql(BENCH_TABLE, conn, if_exists='append', index=False)
    conn.close()
    return run_timestamp, len(records)


def save_rescore_results(df, archive="", scorer="", run_timestamp=None, db_path=DATABASE_NAME):
    """
    Save per-utterance results (pipeline.results_frame)
    Returns: (run timestamp, number of rows saved)
    """
    run_timestamp = _timestamp(run_timestamp)
    if df.empty:
        return run_timestamp, 0

    records = df.copy()
    records.insert(0, "scorer", scorer)
    records.insert(0, "archive", archive)
    records.insert(0, "run_timestamp", run_timestamp)

    conn = sqlite3.connect(db_path)
    records.to_sql(RESCORE_TABLE, conn, if_exists='append', index=False)
    conn.close()
    return run_timestamp, len(records)


def get_unique_run_timestamps(table=BENCH_TABLE, db_path=DATABASE_NAME):
    """Get list of unique run timestamps, newest first"""
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()
    try:
        cursor.execute(f"SELECT DISTINCT run_timestamp FROM {table} ORDER BY run_timestamp DESC")
        timestamps = [row[0] for row in cursor.fetchall()]
    except sqlite3.OperationalError:
        timestamps = []
    conn.close()
    return timestamps


def get_bench_by_timestamp(timestamp, db_path=DATABASE_NAME):
    conn = sqlite3.connect(db_path)
    query = f"SELECT * FROM {BENCH_TABLE} WHERE run_timestamp = ? ORDER BY id"
    df = pd.read_sql_query(query, conn, params=(timestamp,))
    conn.close()
    return df


def get_rescore_by_timestamp(timestamp, db_path=DATABASE_NAME):
    conn = sqlite3.connect(db_path)
    query = f"SELECT * FROM {RESCORE_TABLE} WHERE run_timestamp = ? ORDER BY id"
    df = pd.read_sql_query(query, conn, params=(timestamp,))
    conn.close()
    return df


def get_all_runs(table=BENCH_TABLE, db_path=DATABASE_NAME):
    """Get every stored row of a table"""
    conn = sqlite3.connect(db_path)
    query = f"SELECT * FROM {table} ORDER BY run_timestamp DESC, id"
    df = pd.read_sql_query(query, conn)
    conn.close()
    return df


def delete_run(timestamp, db_path=DATABASE_NAME):
    """Delete a run from both tables. Returns the number of rows removed"""
    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()
    deleted_count = 0
    for table in (BENCH_TABLE, RESCORE_TABLE):
        cursor.execute(f"DELETE FROM {table} WHERE run_timestamp = ?", (timestamp,))
        deleted_count += cursor.rowcount
    conn.commit()
    conn.close()
    return deleted_count


def export_to_excel(timestamp=None, filename='rescore_export.xlsx', db_path=DATABASE_NAME):
    """
    Export stored runs to an Excel file, one sheet per table
    If timestamp is provided, export only that run, otherwise export all
    """
    if timestamp:
        sheets = {
            "bench": get_bench_by_timestamp(timestamp, db_path),
            "rescore": get_rescore_by_timestamp(timestamp, db_path),
        }
    else:
        sheets = {
            "bench": get_all_runs(BENCH_TABLE, db_path),
            "rescore": get_all_runs(RESCORE_TABLE, db_path),
        }

    sheets = {name: df for name, df in sheets.items() if not df.empty}
    if not sheets:
        return False
    with pd.ExcelWriter(filename, engine='openpyxl') as writer:
        for name, df in sheets.items():
            df.to_excel(writer, sheet_name=name, index=False)
    return True
