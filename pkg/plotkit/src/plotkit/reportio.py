"""Readers for the experiment report formats.

The certificate pipeline persists a JSON report
(records/boundaries/metrics/error_fit/provenance) and a flat CSV with columns
sample_id,dataset,method,certificate,error,label,fine_label.  This module
parses both without importing the pipeline package.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

__all__ = ["Record", "ReportData", "load_report", "MissingColumnsError"]

CSV_COLUMNS = ["sample_id", "dataset", "method", "certificate", "error", "label", "fine_label"]


class MissingColumnsError(ValueError):
    """Report lacks required columns; the message lists them."""


@dataclass
class Record:
    sample_id: int
    dataset: str
    method: str
    certificate: float
    error: float | None
    label: str | None
    fine_label: str | None


@dataclass
class ReportData:
    records: list
    boundaries: dict            # method -> boundary dict
    error_fit: dict | None      # {"a","b","c","band",...}
    source: str


def _record_from_mapping(row: dict) -> Record:
    return Record(
        sample_id=int(row["sample_id"]),
        dataset=str(row["dataset"]),
        method=str(row["method"]),
        certificate=float(row["certificate"]),
        error=None if row.get("error") in (None, "") else float(row["error"]),
        label=row.get("label") or None,
        fine_label=row.get("fine_label") or None,
    )


def _load_csv(path: Path) -> ReportData:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise MissingColumnsError(f"{path}: missing columns: {', '.join(missing)}")
        records = [_record_from_mapping(row) for row in reader]
    return ReportData(records=records, boundaries={}, error_fit=None, source=str(path))


def _load_json(path: Path) -> ReportData:
    payload = json.loads(path.read_text())
    rows = payload.get("records") or []
    missing_keys: set = set()
    records = []
    for row in rows:
        absent = {c for c in CSV_COLUMNS if c not in row}
        if absent:
            missing_keys |= absent
            continue
        records.append(_record_from_mapping(row))
    if missing_keys:
        raise MissingColumnsError(f"{path}: missing columns: {', '.join(sorted(missing_keys))}")
    return ReportData(
        records=records,
        boundaries=payload.get("boundaries") or {},
        error_fit=payload.get("error_fit"),
        source=str(path),
    )


def load_report(path: str | Path) -> ReportData:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"report not found: {path}")
    data = _load_csv(path) if path.suffix == ".csv" else _load_json(path)
    if not data.records:
        raise ValueError(f"{path}: no rows")
    return data


def load_boundaries(path: str | Path) -> dict:
    """Standalone boundary file: {"boundaries": {method: {...}}}."""
    payload = json.loads(Path(path).read_text())
    return payload.get("boundaries") or {}


def load_error_fit(path: str | Path) -> dict:
    """Standalone fit file: {"error_fit": {...}, "coverage": ...}."""
    payload = json.loads(Path(path).read_text())
    if "error_fit" not in payload:
        raise ValueError(f"{path}: no 'error_fit' object")
    return payload["error_fit"]
