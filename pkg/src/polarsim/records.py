"""Run records and their on-disk layout (manifest, series, snapshots)."""
from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__

SERIES_HEAD = ("t", "mass", "alpha", "min_u", "max_u", "support_fraction")
SNAPSHOT_HEAD = ("theta", "u", "xi", "w_trace")


def fmt(x) -> str:
    """17 significant digits; ``None``/NaN become blank cells."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return "%.17g" % x


@dataclass
class Verdict:
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": _jsonable(self.measured),
            "threshold": _jsonable(self.threshold),
            "passed": bool(self.passed),
            "detail": self.detail,
        }


@dataclass
class Snapshot:
    t: float
    theta: np.ndarray
    u: np.ndarray
    xi: np.ndarray
    w_trace: np.ndarray | None = None


@dataclass
class RunRecord:
    kind: str
    config: dict
    series: list[dict] = field(default_factory=list)
    snapshots: list[Snapshot] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, name: str) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "code_version": __version__,
            "python": platform.python_version(),
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "info": {k: _jsonable(v) for k, v in self.info.items()},
            "verdicts": [v.as_dict() for v in self.verdicts],
            "passed": self.passed,
        }


def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


def snapshot_name(t: float) -> str:
    return "snapshot_tinf.csv" if math.isinf(t) else f"snapshot_t{t:.6g}.csv"


def _write_table(path: Path, rows: list[dict], head: tuple[str, ...] = ()):
    cols = list(head)
    for row in rows:
        for k in row:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in cols])


def write_record(record: RunRecord, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(record.manifest(), fh, indent=2)
    if record.series:
        _write_table(out / "series.csv", record.series, SERIES_HEAD)
    for snap in record.snapshots:
        n = snap.theta.size
        w = snap.w_trace if snap.w_trace is not None else [None] * n
        rows = [{"theta": snap.theta[j], "u": snap.u[j], "xi": snap.xi[j], "w_trace": w[j]} for j in range(n)]
        _write_table(out / snapshot_name(snap.t), rows, SNAPSHOT_HEAD)
    for name, rows in record.tables.items():
        _write_table(out / f"{name}.csv", rows)
    return out
