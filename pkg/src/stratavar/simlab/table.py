"""Result tables and their CSV form.

Layout: one header line, one ``#`` metadata line, then data rows. Floats are
written with ``repr`` so reruns with the same seed are byte-identical apart
from the metadata line's timestamp.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np


def _cell(v) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class ResultTable:
    experiment: str
    columns: tuple
    key_columns: tuple
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, **values):
        missing = set(self.columns) - set(values)
        extra = set(values) - set(self.columns)
        if missing or extra:
            raise ValueError(f"row schema mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        self.rows.append(tuple(values[c] for c in self.columns))

    def sorted_rows(self) -> list:
        idx = [self.columns.index(c) for c in self.key_columns]
        return sorted(self.rows, key=lambda r: tuple(_sort_key(r[i]) for i in idx))

    def column(self, name: str, **where) -> list:
        i = self.columns.index(name)
        conds = [(self.columns.index(c), v) for c, v in where.items()]
        return [r[i] for r in self.sorted_rows() if all(r[j] == v for j, v in conds)]

    def records(self) -> list:
        return [dict(zip(self.columns, r)) for r in self.sorted_rows()]

    def data_lines(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for r in self.sorted_rows():
            w.writerow([_cell(v) for v in r])
        return buf.getvalue()

    def to_csv(self, path=None, timestamp: str | None = None) -> str:
        meta = dict(self.metadata)
        meta["timestamp"] = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
        text = ",".join(self.columns) + "\n"
        text += "# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n"
        text += self.data_lines()
        if path is not None:
            Path(path).write_text(text)
        return text


def _sort_key(v):
    # Numbers before strings, each in natural order.
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (0, float(v), "")
    return (1, 0.0, str(v))


def read_result_csv(path) -> tuple:
    """Return ``(columns, metadata, rows)`` with all cells as strings."""
    lines = Path(path).read_text().splitlines()
    columns = lines[0].split(",")
    meta = {}
    for part in lines[1].lstrip("# ").split(" "):
        if "=" in part:
            k, v = part.split("=", 1)
            meta[k] = v
    rows = list(csv.reader(lines[2:]))
    return columns, meta, rows
