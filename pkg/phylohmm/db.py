"""
SQLite run ledger: stores CLI runs, their events, SIR diagnostics and
validation metrics. Nothing here feeds back into primary outputs.
"""

import json
import os
import sqlite3
from datetime import datetime
from typing import Iterable, List, Optional

DB_PATH = os.getenv("PHYLOHMM_DB_PATH", "data/phylohmm.db")


def get_conn():
    conn = sqlite3.connect(DB_PATH)
    conn.row_factory = sqlite3.Row
    return conn


def init_db():
    directory = os.path.dirname(DB_PATH)
    if directory:
        os.makedirs(directory, exist_ok=True)
    conn = get_conn()
    c = conn.cursor()

    c.execute("""
        CREATE TABLE IF NOT EXISTS runs (
            id          INTEGER PRIMARY KEY AUTOINCREMENT,
            command     TEXT NOT NULL,
            seed        INTEGER,
            arguments   TEXT,                -- JSON of parsed CLI arguments
            status      TEXT DEFAULT 'running', -- running / ok / failed
            message     TEXT,
            started_at  TEXT,
            finished_at TEXT
        )
    """)

    c.execute("""
        CREATE TABLE IF NOT EXISTS run_log (
            id         INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id     INTEGER,
            level      TEXT,   -- INFO / WARNING / ERROR
            message    TEXT,
            created_at TEXT DEFAULT (datetime('now'))
        )
    """)

    c.execute("""
        CREATE TABLE IF NOT EXISTS sir_diagnostics (
            id         INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id     INTEGER,
            n_pool     INTEGER,
            n_final    INTEGER,
            ess        REAL,
            n_finite   INTEGER,
            max_weight REAL,
            created_at TEXT DEFAULT (datetime('now'))
        )
    """)

    c.execute("""
        CREATE TABLE IF NOT EXISTS validation_results (
            id         INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id     INTEGER,
            replicate  TEXT,
            method     TEXT,
            metric     TEXT,
            rho        REAL,
            value      REAL,
            created_at TEXT DEFAULT (datetime('now'))
        )
    """)

    conn.commit()
    conn.close()


# ─────────────────────────────────────────────
#  Runs
# ─────────────────────────────────────────────
def start_run(command: str, seed: Optional[int], arguments: dict) -> int:
    conn = get_conn()
    cur = conn.execute(
        "INSERT INTO runs (command, seed, arguments, status, started_at) VALUES (?,?,?,?,?)",
        (command, seed, json.dumps(arguments, sort_keys=True, default=str), "running",
         datetime.utcnow().isoformat()),
    )
    run_id = cur.lastrowid
    conn.commit()
    conn.close()
    return run_id


def finish_run(run_id: int, status: str, message: str = ""):
    conn = get_conn()
    conn.execute(
        "UPDATE runs SET status=?, message=?, finished_at=? WHERE id=?",
        (status, message, datetime.utcnow().isoformat(), run_id),
    )
    conn.commit()
    conn.close()


def get_runs(limit=50) -> List[dict]:
    conn = get_conn()
    rows = conn.execute("SELECT * FROM runs ORDER BY id DESC LIMIT ?", (limit,)).fetchall()
    conn.close()
    return [dict(r) for r in rows]


# ─────────────────────────────────────────────
#  Events
# ─────────────────────────────────────────────
def log_event(level: str, message: str, run_id: Optional[int] = None):
    conn = get_conn()
    conn.execute("INSERT INTO run_log (run_id, level, message) VALUES (?,?,?)", (run_id, level, message))
    conn.commit()
    conn.close()


def get_events(run_id: Optional[int] = None, limit=50) -> List[dict]:
    conn = get_conn()
    if run_id is None:
        rows = conn.execute("SELECT * FROM run_log ORDER BY id DESC LIMIT ?", (limit,)).fetchall()
    else:
        rows = conn.execute(
            "SELECT * FROM run_log WHERE run_id=? ORDER BY id DESC LIMIT ?", (run_id, limit)
        ).fetchall()
    conn.close()
    return [dict(r) for r in rows]


# ─────────────────────────────────────────────
#  Diagnostics and metrics
# ─────────────────────────────────────────────
def record_sir_diagnostics(run_id: int, diagnostics):
    conn = get_conn()
    conn.execute(
        "INSERT INTO sir_diagnostics (run_id, n_pool, n_final, ess, n_finite, max_weight) VALUES (?,?,?,?,?,?)",
        (run_id, diagnostics.n_pool, diagnostics.n_final, diagnostics.ess, diagnostics.n_finite,
         diagnostics.max_weight),
    )
    conn.commit()
    conn.close()


def get_sir_diagnostics(run_id: int) -> List[dict]:
    conn = get_conn()
    rows = conn.execute("SELECT * FROM sir_diagnostics WHERE run_id=? ORDER BY id", (run_id,)).fetchall()
    conn.close()
    return [dict(r) for r in rows]


def record_validation(run_id: int, rows: Iterable[dict]):
    """rows carry directory, method, metric, rho and value keys (rho may be NaN)."""
    conn = get_conn()
    conn.executemany(
        "INSERT INTO validation_results (run_id, replicate, method, metric, rho, value) VALUES (?,?,?,?,?,?)",
        [(run_id, r.get("directory"), r.get("method"), r.get("metric"),
          None if r.get("rho") != r.get("rho") else r.get("rho"), r.get("value")) for r in rows],
    )
    conn.commit()
    conn.close()


def get_validation(run_id: int) -> List[dict]:
    conn = get_conn()
    rows = conn.execute("SELECT * FROM validation_results WHERE run_id=? ORDER BY id", (run_id,)).fetchall()
    conn.close()
    return [dict(r) for r in rows]
