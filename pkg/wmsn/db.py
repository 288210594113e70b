# wmsn/db.py
"""
Run registry using SQLModel (SQLite).
Provides: get_engine(), get_session() generator, init_db(), record_run(), list_runs()

DB_PATH may be a plain file path like './runs/wmsn_runs.sqlite' or a full
SQLAlchemy URL like 'sqlite:///./runs/wmsn_runs.sqlite'. Engines are created
lazily, one per URL, so the CLI's --db option and tests can point elsewhere.
"""

import logging
import os
from typing import Dict, List, Optional

from sqlalchemy.engine import Engine
from sqlmodel import Session, SQLModel, create_engine, select

from . import models  # registers RunRecord in SQLModel metadata
from .settings import settings

logger = logging.getLogger(__name__)

_engines: Dict[str, Engine] = {}


def _make_db_url(db_path: str) -> str:
    """
    Normalize db_path to an SQLAlchemy URL.

    Full URLs are returned as-is; file paths become sqlite:///<absolute path>.
    """
    if not db_path:
        raise ValueError("DB_PATH is empty in settings")

    db_path = str(db_path).strip()
    if "://" in db_path:
        return db_path

    abs_path = db_path if os.path.isabs(db_path) else os.path.abspath(db_path)
    return f"sqlite:///{abs_path}"


def _sqlite_file(url: str) -> Optional[str]:
    prefix = "sqlite:///"
    if url.startswith(prefix) and url != "sqlite:///:memory:":
        return url[len(prefix):]
    return None


def get_engine(db_path: Optional[str] = None) -> Engine:
    url = _make_db_url(db_path or settings.DB_PATH)
    engine = _engines.get(url)
    if engine is None:
        path = _sqlite_file(url)
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        logger.info("Using database URL: %s", url)
        # allow check_same_thread for SQLite threaded use
        engine = create_engine(url, echo=False, connect_args={"check_same_thread": False})
        _engines[url] = engine
    return engine


def get_session(db_path: Optional[str] = None):
    """
    Generator for DB sessions.
    Usage:
      with next(get_session()) as session: ...
    """
    with Session(get_engine(db_path)) as session:
        yield session


def init_db(db_path: Optional[str] = None) -> None:
    """Create tables (idempotent)."""
    engine = get_engine(db_path)
    logger.info("Initializing DB at %s", engine.url)
    SQLModel.metadata.create_all(engine)


# ---------- run registry helpers ----------
def record_run(summary, output_dir: str = "", db_path: Optional[str] = None) -> models.RunRecord:
    """Store one RunSummary (wmsn.sim.RunSummary) and return the saved record."""
    init_db(db_path)
    record = models.RunRecord(
        config_name=summary.config_name,
        v=summary.v,
        seed=summary.seed,
        slots=summary.slots,
        avg_objective=summary.avg_objective,
        avg_objective_post_warmup=summary.avg_objective_post_warmup,
        avg_data_backlog=summary.avg_data_backlog,
        total_grid_cost=summary.total_grid_cost,
        violation_count=summary.violation_count,
        output_dir=str(output_dir or ""),
    )
    with Session(get_engine(db_path)) as session:
        session.add(record)
        session.commit()
        session.refresh(record)
    logger.debug("Recorded run %s (V=%g, seed=%d) as id %s", record.config_name, record.v, record.seed, record.id)
    return record


def list_runs(limit: Optional[int] = None, db_path: Optional[str] = None) -> List[models.RunRecord]:
    """Most recent first."""
    init_db(db_path)
    with Session(get_engine(db_path)) as session:
        stmt = select(models.RunRecord).order_by(models.RunRecord.created_at.desc(), models.RunRecord.id.desc())
        if limit:
            stmt = stmt.limit(limit)
        return list(session.exec(stmt).all())
