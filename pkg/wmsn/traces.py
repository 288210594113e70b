# wmsn/traces.py
"""
Per-slot trace files.

Column names are ``kind[key]`` with ``|`` separating key parts, for example
``Q[C|s1|A|E]`` (node, session, source, sink), ``E[A]``, ``x[A->C|s1]``.
Values are written with a fixed ``%.12g`` format and rows are rounded to the
same precision before they are kept in memory, so a summary computed from
memory equals one recomputed from the file.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import pandas as pd

from .errors import ConfigError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
COLUMN_RE = re.compile(r"^(?P<kind>[A-Za-z]+)\[(?P<key>[^\]]*)\]$")


def round_value(value: float) -> float:
    return float(FLOAT_FORMAT % value)


def round_row(row: Mapping[str, float]) -> Dict[str, float]:
    return {k: (v if isinstance(v, int) else round_value(v)) for k, v in row.items()}


@dataclass
class TraceLayout:
    """Column index by kind: kind -> [(column, key parts)]."""

    columns: List[str]
    by_kind: Dict[str, List[Tuple[str, Tuple[str, ...]]]] = field(default_factory=dict)

    @classmethod
    def from_columns(cls, columns: Iterable[str]) -> "TraceLayout":
        columns = list(columns)
        by_kind: Dict[str, List[Tuple[str, Tuple[str, ...]]]] = {}
        for col in columns:
            m = COLUMN_RE.match(col)
            if m:
                by_kind.setdefault(m.group("kind"), []).append((col, tuple(m.group("key").split("|"))))
        return cls(columns=columns, by_kind=by_kind)

    def of(self, kind: str) -> List[Tuple[str, Tuple[str, ...]]]:
        return self.by_kind.get(kind, [])


class TraceWriter:
    """Buffers rows and appends them to a CSV file in chunks."""

    def __init__(self, path: Union[str, Path], columns: List[str], chunk: int = 1000):
        self.path = Path(path)
        self.columns = columns
        self.chunk = max(1, int(chunk))
        self._buffer: List[Dict[str, float]] = []
        self._header_written = False
        self.rows_written = 0
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"output directory not writable: {self.path.parent} ({exc})") from exc

    def append(self, row: Dict[str, float]) -> None:
        self._buffer.append(row)
        if len(self._buffer) >= self.chunk:
            self.flush()

    def flush(self) -> None:
        if not self._buffer and self._header_written:
            return
        frame = pd.DataFrame(self._buffer, columns=self.columns)
        frame.to_csv(self.path, mode="a", header=not self._header_written, index=False, float_format=FLOAT_FORMAT)
        self._header_written = True
        self.rows_written += len(self._buffer)
        logger.debug("Flushed %d trace rows to %s", len(self._buffer), self.path)
        self._buffer = []

    def close(self) -> None:
        self.flush()


def read_trace(path: Union[str, Path]) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"cannot read trace {path}: {exc}") from exc


def write_json(path: Union[str, Path], payload: dict) -> None:
    try:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"output directory not writable: {Path(path).parent} ({exc})") from exc


def read_json(path: Union[str, Path]) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
