"""Run records and their CSV / plot-data serializations.

CSV layout: ``# key = value`` metadata lines, one header line, data rows.
Floats are written with 17 significant digits so parsing them back gives
the same doubles; missing cells are empty.  The wall-time line is written
last, so two runs of the same config differ only in that line.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "LOG_FLOOR",
    "RunRecord",
    "CSVStream",
    "format_value",
    "emit_csv",
    "read_csv",
    "plot_columns",
    "emit_plot_data",
]

LOG_FLOOR = -16.0
WALL_TIME_KEY = "wall_time_s"


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _parse_value(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


@dataclass
class RunRecord:
    """Config echo and time series of one run."""

    columns: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    status: str = "ok"

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows], dtype=float)

    @property
    def final(self) -> dict:
        return self.rows[-1] if self.rows else {}

    def window_mean(self, name: str, start: float, end: float) -> float:
        """Mean of ``name`` over rows with ``start <= t <= end``."""
        t = self.column("t")
        v = self.column(name)
        sel = (t >= start - 1e-12) & (t <= end + 1e-12) & np.isfinite(v)
        return float(np.mean(v[sel])) if np.any(sel) else float("nan")


def _meta_lines(metadata: dict) -> str:
    return "".join(f"# {k} = {format_value(v)}\n" for k, v in metadata.items() if k != WALL_TIME_KEY)


def _row_line(columns, row) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([format_value(row.get(c)) for c in columns])
    return buf.getvalue()


class CSVStream:
    """Writes rows as they arrive so an aborted run leaves a parseable file."""

    def __init__(self, path, columns, metadata: dict | None = None):
        self.path = Path(path)
        self.columns = list(columns)
        try:
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot open {self.path} for writing: {exc}") from exc
        self._fh.write(_meta_lines(metadata or {}))
        self._fh.write(",".join(self.columns) + "\n")
        self._fh.flush()

    def write(self, row: dict) -> None:
        self._fh.write(_row_line(self.columns, row))
        self._fh.flush()

    def close(self, trailer: dict | None = None) -> None:
        if self._fh.closed:
            return
        for k, v in (trailer or {}).items():
            self._fh.write(f"# {k} = {format_value(v)}\n")
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_csv(record: RunRecord, path) -> Path:
    path = Path(path)
    stream = CSVStream(path, record.columns, record.metadata)
    for row in record.rows:
        stream.write(row)
    trailer = {WALL_TIME_KEY: record.metadata[WALL_TIME_KEY]} if WALL_TIME_KEY in record.metadata else None
    stream.close(trailer)
    return path


def read_csv(path) -> RunRecord:
    path = Path(path)
    metadata, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" = ")
                metadata[key] = value
            else:
                lines.append(line)
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        return RunRecord(columns=[], metadata=metadata)
    rows = []
    for cells in reader:
        if not cells:
            continue
        rows.append({c: _parse_value(v) for c, v in zip(header, cells)})
    return RunRecord(columns=header, rows=rows, metadata=metadata)


def _log10(v):
    if v is None:
        return float("nan")
    v = float(v)
    if math.isnan(v):
        return v
    if v <= 0:
        return LOG_FLOOR
    return max(math.log10(v), LOG_FLOOR)


_PLOT_SOURCES = ("state_error_rel", "obs_error_l2", "obs_error_rel", "param_error_rel",
                 "ra_error_rel", "pr_error_rel", "zeta_error_rel", "theta_error_rel")


def plot_columns(record: RunRecord) -> list[str]:
    return ["t"] + [f"log10_{c}" for c in _PLOT_SOURCES if c in record.columns]


def emit_plot_data(record: RunRecord, path) -> Path:
    """``t`` against log10 of every error column present; zero errors map to the floor."""
    path = Path(path)
    cols = plot_columns(record)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in record.rows:
            out = {"t": row.get("t")}
            for c in cols[1:]:
                out[c] = _log10(row.get(c[len("log10_"):]))
            fh.write(_row_line(cols, out))
    return path
