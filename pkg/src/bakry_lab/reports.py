"""Report serialization: line-delimited records, columnar text and summaries.

A structured report is a text file whose first line is a header record
holding the schema version and the wall-clock timestamp; every following
line is one check record.  Everything after the header is a pure function
of the configuration, so two identical runs differ only in line one.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .records import EstimateReport, ResidualReport, jsonable

__all__ = [
    "SCHEMA_VERSION",
    "FORMATS",
    "CheckRecord",
    "ErrorRecord",
    "ReportWriter",
    "emit_report",
    "parse_report",
    "write_summary",
    "write_table",
    "read_table",
]

SCHEMA_VERSION = 1
FORMATS = ("structured-records", "columnar-text")

ESTIMATE_COLUMNS = ("index", "h", "lhs", "rhs", "margin", "slack", "passed")
RESIDUAL_COLUMNS = ("index", "h_finest", "sup_finest", "l2_finest", "order", "exact", "passed")


@dataclass
class ErrorRecord:
    """A check aborted by an exception."""

    error_type: str
    message: str
    kind: str = "error"

    @property
    def verdict(self) -> str:
        return "errored"

    @property
    def passed(self) -> bool:
        return False

    def to_dict(self) -> dict:
        return {"error_type": self.error_type, "message": self.message, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorRecord":
        return cls(**d)

    @classmethod
    def from_exception(cls, exc: BaseException) -> "ErrorRecord":
        return cls(type(exc).__name__, str(exc))


_KINDS = {"estimate": EstimateReport, "residual": ResidualReport, "error": ErrorRecord}


@dataclass
class CheckRecord:
    """One check outcome tagged with its configured id and type.

    ``series`` maps a quantity name to ``(column names, 2-D array)``; it is
    exported as columnar text and kept out of the structured record.
    """

    check: str
    type: str
    record: EstimateReport | ResidualReport | ErrorRecord
    series: dict = field(default_factory=dict, compare=False)

    @property
    def verdict(self) -> str:
        return self.record.verdict

    @property
    def passed(self) -> bool:
        return bool(self.record.passed)

    def to_dict(self) -> dict:
        return {"type": "record", "check": self.check, "check_type": self.type,
                "verdict": self.verdict, "record": self.record.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CheckRecord":
        body = d["record"]
        try:
            kind = _KINDS[body["kind"]]
        except KeyError:
            raise ValueError(f"unknown record kind {body.get('kind')!r}") from None
        return cls(check=d["check"], type=d["check_type"], record=kind.from_dict(body))


def _dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, allow_nan=False, separators=(",", ":"))


def _header(meta: dict | None, timestamp: str | None) -> dict:
    if timestamp is None:
        timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return {"type": "header", "schema": SCHEMA_VERSION, "created": timestamp,
            "meta": jsonable(meta or {})}


class ReportWriter:
    """Append-only structured report; each record is flushed as written.

    A run interrupted mid-way leaves a header plus the completed records,
    which :func:`parse_report` reads back.
    """

    def __init__(self, path, meta: dict | None = None, timestamp: str | None = None):
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write report to {self.path}: {exc}") from exc
        self._fh.write(_dumps(_header(meta, timestamp)) + "\n")
        self._fh.flush()
        self.count = 0

    def append(self, rec: CheckRecord) -> None:
        self._fh.write(_dumps(rec.to_dict()) + "\n")
        self._fh.flush()
        self.count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ReportWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def parse_report(path) -> tuple[dict, list[CheckRecord]]:
    """Read a structured report back into its header and records."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path}: empty report (missing header)")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError(f"{path}: first line is not a header record")
    if header.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema {header.get('schema')!r}")
    return header, [CheckRecord.from_dict(json.loads(s)) for s in lines[1:] if s.strip()]


def write_table(path, columns: Sequence[str], rows) -> Path:
    """Whitespace-separated numeric table with a ``#`` column header."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    np.savetxt(p, arr, fmt="%.17g", header=" ".join(columns))
    return p


def read_table(path) -> tuple[list[str], np.ndarray]:
    p = Path(path)
    with open(p, encoding="utf-8") as fh:
        columns = fh.readline().lstrip("#").split()
    data = np.loadtxt(p, ndmin=2)
    return columns, data.reshape(-1, len(columns))


def _num(v) -> float:
    return math.nan if v is None else float(v)


def _columnar(records: Sequence[CheckRecord], out: Path) -> list[Path]:
    est, res = [], []
    for i, r in enumerate(records):
        rec = r.record
        if isinstance(rec, EstimateReport):
            est.append([i, rec.h, rec.lhs, rec.rhs, rec.margin, rec.slack, float(rec.passed)])
        elif isinstance(rec, ResidualReport):
            res.append([i, rec.h[-1], rec.sup[-1], rec.l2[-1], _num(rec.order),
                        float(rec.exact), float(rec.passed)])
    paths = [write_table(out / "estimates.txt", ESTIMATE_COLUMNS, est),
             write_table(out / "residuals.txt", RESIDUAL_COLUMNS, res)]
    for r in records:
        for name, (columns, data) in sorted(r.series.items()):
            paths.append(write_table(out / f"{r.check}.{name}.txt", columns, data))
    return paths


def _headline(rec) -> str:
    if isinstance(rec, EstimateReport):
        return f"margin={rec.margin:.6g} slack={rec.slack:.3g} h={rec.h:.4g}"
    if isinstance(rec, ResidualReport):
        order = "exact" if rec.exact else f"{_num(rec.order):.3f}"
        return f"sup={rec.sup[-1]:.3e} order={order} h={rec.h[-1]:.4g}"
    return f"{rec.error_type}: {rec.message}"


def write_summary(path, records: Sequence[CheckRecord]) -> Path:
    """Human-readable summary, one line per check id."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    width = max([len(r.check) for r in records] + [5])
    lines = [f"{len(records)} checks, "
             f"{sum(r.passed for r in records)} passed, "
             f"{sum(r.verdict == 'errored' for r in records)} errored"]
    for r in records:
        lines.append(f"{r.check:<{width}}  {r.verdict:<19}  {r.type:<20}  {_headline(r.record)}")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def emit_report(records: Iterable[CheckRecord], out_dir, format: str = "structured-records",
                name: str = "report", meta: dict | None = None,
                timestamp: str | None = None) -> list[Path]:
    """Write records in one of :data:`FORMATS`; returns the written paths.

    Zero records produce header-only files.
    """
    if format not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    records = list(records)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    if format == "columnar-text":
        return _columnar(records, out)
    with ReportWriter(out / f"{name}.jsonl", meta=meta, timestamp=timestamp) as w:
        for r in records:
            w.append(r)
    return [w.path]
