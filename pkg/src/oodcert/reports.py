"""Report persistence: JSON report objects plus flat CSV for plotting tools.

A report bundles certificate rows with (optionally) decision boundaries,
metrics, an error fit, and provenance.  Serialization is deterministic:
identical inputs always produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .decision import DecisionBoundary, ErrorFit
from .fileio import atomic_write_text
from .likelihood import CertificateRecord

__all__ = ["Report", "write_report", "read_report", "csv_path_for"]

CSV_FIELDS = ["sample_id", "dataset", "method", "certificate", "error", "label", "fine_label"]


class Report:
    """In-memory report: rows + derived objects + provenance."""

    def __init__(self, records: list[CertificateRecord], boundaries: dict | None = None,
                 metrics: list | None = None, error_fit: ErrorFit | None = None,
                 provenance: dict | None = None):
        self.records = records
        self.boundaries = boundaries or {}
        self.metrics = metrics or []
        self.error_fit = error_fit
        self.provenance = provenance or {}

    def to_dict(self) -> dict:
        return {
            "records": [r.to_row() for r in self.records],
            "boundaries": {m: b.to_dict() for m, b in sorted(self.boundaries.items())} or None,
            "metrics": self.metrics or None,
            "error_fit": self.error_fit.to_dict() if self.error_fit else None,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(
            records=[CertificateRecord.from_row(r) for r in d.get("records", [])],
            boundaries={m: DecisionBoundary.from_dict(b)
                        for m, b in (d.get("boundaries") or {}).items()},
            metrics=d.get("metrics") or [],
            error_fit=ErrorFit.from_dict(d["error_fit"]) if d.get("error_fit") else None,
            provenance=d.get("provenance") or {},
        )


def csv_path_for(json_path: str | Path) -> Path:
    json_path = Path(json_path)
    return json_path.with_suffix(".csv")


def write_report(path: str | Path, report: Report) -> None:
    """JSON report plus the flat CSV of rows next to it (atomic writes)."""
    path = Path(path)
    atomic_write_text(path, json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in report.records:
        row = rec.to_row()
        writer.writerow({k: ("" if row[k] is None else row[k]) for k in CSV_FIELDS})
    atomic_write_text(csv_path_for(path), buf.getvalue())


def read_report(path: str | Path) -> Report:
    return Report.from_dict(json.loads(Path(path).read_text()))
