"""Study reports: ``report.json`` (summary, verdicts, metadata) and ``rows.csv``.

``rows.csv`` is a long table with one estimate per line.  Header::

    study,case,scheme,probe,tau,n_steps,quantity,value,stderr,reference,seed,path_start,path_stop

* ``case``: the parameter tuple, e.g. ``p=4,q=2,alpha=0.5``.
* ``scheme``: scheme name, or ``ref-vs-other`` for paired comparisons.
* ``probe``: the integrand ``g`` of the versioned probe family.
* ``value``/``stderr``: the estimate and its Monte Carlo standard error
  (``stderr`` is 0 for deterministic values).
* ``reference``: closed-form value where one exists, else empty.
* ``seed``, ``path_start``, ``path_stop``: the paths ``[start, stop)`` the
  estimate was computed from (empty range for deterministic rows).

Floats are written with ``repr``, the shortest string that round-trips, so
the file is byte-identical whenever the numbers are.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_FIELDS = ("study", "case", "scheme", "probe", "tau", "n_steps", "quantity", "value", "stderr",
              "reference", "seed", "path_start", "path_stop")

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


@dataclass
class Verdict:
    status: str
    detail: str
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict:
        return {"status": self.status, "detail": self.detail, "metrics": _jsonable(self.metrics)}


@dataclass
class StudyReport:
    """Config echo, result rows, fitted summaries, verdicts and run metadata."""

    study: str
    config: dict
    rows: list[dict]
    verdicts: dict[str, Verdict]
    summary: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())

    def rows_csv(self) -> str:
        return rows_to_csv(self.rows)

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "config": _jsonable(self.config),
            "summary": _jsonable(self.summary),
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
            "passed": self.passed,
            "metadata": _jsonable(self.metadata),
        }

    def select(self, **match) -> list[dict]:
        """Rows whose fields equal every ``key=value`` in ``match``."""
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in ROW_FIELDS])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_report(report: StudyReport, out_dir: str | Path) -> Path:
    """Write ``report.json`` and ``rows.csv`` into ``out_dir``; returns the JSON path."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "rows.csv").write_text(report.rows_csv())
    path = d / "report.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def diff_rows(expected_csv: str, actual_csv: str) -> list[str]:
    """Line-level differences between two ``rows.csv`` texts."""
    a, b = expected_csv.splitlines(), actual_csv.splitlines()
    out = [f"row count {len(a)} != {len(b)}"] if len(a) != len(b) else []
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            out.append(f"line {i + 1}: expected {x!r}, got {y!r}")
    return out
