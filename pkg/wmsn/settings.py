# wmsn/settings.py
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # default directory for run / sweep outputs when --output-dir is omitted
    OUTPUT_DIR: str = "./runs"
    # SQLAlchemy/SQLModel compatible URL (or plain file path) for the run registry
    DB_PATH: str = "sqlite:///./runs/wmsn_runs.sqlite"
    LOG_LEVEL: Optional[str] = "INFO"
    # trace rows buffered in memory before each append to trace.csv
    TRACE_CHUNK: int = 1000

    model_config = SettingsConfigDict(
        env_prefix="WMSN_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


settings = Settings()
