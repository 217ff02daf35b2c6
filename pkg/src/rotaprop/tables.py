"""Result tables and their CSV/JSON emission."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PASS, FAIL, UNDER = "true", "false", "under_resolved"


class EmptyTableError(ValueError):
    pass


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def add(self, **row) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError(f"row lacks columns {sorted(missing)}")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    @property
    def status(self) -> str:
        flags = [r.get("pass") for r in self.rows if "pass" in r]
        if FAIL in flags or not all(self.checks.values()):
            return "fail"
        if UNDER in flags:
            return "under_resolved"
        return "pass"


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def pass_flag(ok: bool, resolved: bool = True) -> str:
    if not resolved:
        return UNDER
    return PASS if ok else FAIL


def slope(x, y) -> float:
    """Least-squares slope of log y against log x over positive entries."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if np.unique(x[keep]).size < 2:
        return math.nan
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def summarize(table: Table) -> dict:
    stats = {}
    numeric = [c for c in table.columns if table.rows and isinstance(table.rows[0][c], (float, np.floating))]
    first = table.columns[0] if table.rows and isinstance(table.rows[0][table.columns[0]], (int, float, np.number)) else None
    for col in numeric:
        vals = table.column(col).astype(float)
        finite = vals[~np.isnan(vals)]
        entry = {"min": _finite(finite.min()), "max": _finite(finite.max())} if finite.size else {"min": None, "max": None}
        if first is not None and col != first:
            s = slope(table.column(first), vals)
            entry["loglog_slope_vs_" + first] = None if math.isnan(s) else s
        stats[col] = entry
    return {
        "table": table.name,
        "rows": len(table.rows),
        "status": table.status,
        "checks": table.checks,
        "notes": table.notes,
        "columns": stats,
    }


def _finite(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def emit(table: Table, path: str | os.PathLike) -> tuple[Path, Path]:
    """Write ``table`` as CSV plus a JSON summary next to it."""
    if not table.rows:
        raise EmptyTableError(f"table {table.name!r} is empty")
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([fmt(row[c]) for c in table.columns])
    _atomic_write(path, buf.getvalue())
    summary = path.with_suffix(".summary.json")
    _atomic_write(summary, json.dumps(summarize(table), indent=2, sort_keys=True, default=_json_default) + "\n")
    return path, summary


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)
