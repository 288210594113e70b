"""
Create the run registry tables (call once at setup).
Usage:
  python -m wmsn.db_migrate [--db PATH]
"""

import logging
from typing import List, Optional

import click
from sqlalchemy import inspect

from wmsn.db import get_engine, init_db
from wmsn.settings import settings

logger = logging.getLogger(__name__)


def migrate(db_path: Optional[str] = None) -> List[str]:
    """Create missing tables and return the table names now present."""
    init_db(db_path)
    tables = sorted(inspect(get_engine(db_path)).get_table_names())
    logger.info("Registry tables: %s", ", ".join(tables))
    return tables


@click.command()
@click.option("--db", "db_path", default=None, help="Registry path or URL (default WMSN_DB_PATH).")
def cli(db_path: Optional[str]) -> None:
    logger.info("Running DB migration / init on %s", db_path or settings.DB_PATH)
    migrate(db_path)
    logger.info("DB initialization complete.")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    cli()
