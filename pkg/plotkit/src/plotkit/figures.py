"""Figure rendering: SVG output plus a JSON sidecar of plotted primitives."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "plotkit"

import matplotlib.pyplot as plt
import numpy as np

from .reportio import ReportData, load_boundaries, load_error_fit, load_report

__all__ = ["FigureSpec", "render", "KINDS"]

KINDS = ("scatter-boundaries", "histograms", "error-fit")

# quadrant naming in the error-vs-certificate plane:
# I upper right, II upper left, III lower left, IV lower right
QUADRANT_LABELS = ("I", "II", "III", "IV")


@dataclass(frozen=True)
class FigureSpec:
    """One figure: which report, which kind, where the image goes."""

    report: str
    kind: str
    out: str
    method: str = "JLBC"
    boundary: str = ""          # optional standalone boundary file
    fit: str = ""               # optional standalone error-fit file
    xscale: str = "linear"
    yscale: str = "linear"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; choose from {KINDS}")
        for scale in (self.xscale, self.yscale):
            if scale not in ("linear", "log"):
                raise ValueError(f"unknown axis scale {scale!r}")


def _method_records(data: ReportData, method: str):
    records = [r for r in data.records if r.method == method]
    if not records:
        raise ValueError(f"no rows for method {method!r} in {data.source}")
    return records


def _dataset_groups(records):
    groups: dict[str, list] = {}
    for r in records:
        groups.setdefault(r.dataset, []).append(r)
    return dict(sorted(groups.items()))


def _boundary_for(spec: FigureSpec, data: ReportData) -> dict:
    boundaries = load_boundaries(spec.boundary) if spec.boundary else data.boundaries
    if spec.method not in boundaries:
        raise ValueError(f"no boundary for method {spec.method!r}; "
                         f"supply --boundary or use a classified report")
    return boundaries[spec.method]


def _fit_for(spec: FigureSpec, data: ReportData) -> dict:
    if spec.fit:
        return load_error_fit(spec.fit)
    if data.error_fit is None:
        raise ValueError("report carries no error fit; supply --fit")
    return data.error_fit


def _scatter_boundaries(spec: FigureSpec, data: ReportData, ax) -> list:
    records = _method_records(data, spec.method)
    withheld = [r for r in records if r.error is None]
    if withheld:
        raise ValueError(f"{len(withheld)} rows lack errors; scatter needs ground truth")
    boundary = _boundary_for(spec, data)
    elements = []
    for dataset, recs in _dataset_groups(records).items():
        certs = [r.certificate for r in recs]
        errs = [r.error for r in recs]
        ax.scatter(certs, errs, s=14, alpha=0.75, label=dataset)
        elements.append({"type": "scatter", "dataset": dataset, "n": len(recs)})
    ax.axvline(boundary["cert_threshold"], linestyle="--", color="black")
    elements.append({"type": "vline", "x": boundary["cert_threshold"], "style": "dashed",
                     "role": "certificate-boundary"})
    if boundary.get("error_threshold") is not None:
        ax.axhline(boundary["error_threshold"], linestyle="--", color="black")
        elements.append({"type": "hline", "y": boundary["error_threshold"], "style": "dashed",
                         "role": "error-boundary"})
    # quadrant annotations at the axes corners
    for name, (x_frac, y_frac) in zip(QUADRANT_LABELS,
                                      ((0.97, 0.95), (0.03, 0.95), (0.03, 0.05), (0.97, 0.05))):
        ax.text(x_frac, y_frac, name, transform=ax.transAxes,
                ha="center", va="center", fontsize=12, fontweight="bold")
    elements.append({"type": "quadrant-labels", "labels": list(QUADRANT_LABELS)})
    ax.set_xlabel(f"certificate ({spec.method})")
    ax.set_ylabel("error")
    ax.legend(fontsize=7)
    return elements


def _histograms(spec: FigureSpec, data: ReportData, fig) -> list:
    records = _method_records(data, spec.method)
    ax_cert, ax_err = fig.subplots(1, 2)
    elements = []
    groups = _dataset_groups(records)
    for dataset, recs in groups.items():
        certs = np.array([r.certificate for r in recs])
        ax_cert.hist(certs, bins=24, alpha=0.6, label=dataset)
        elements.append({"type": "histogram", "axis": "certificate", "dataset": dataset,
                         "n": len(recs)})
    for dataset, recs in groups.items():
        errs = np.array([r.error for r in recs if r.error is not None])
        if errs.size:
            ax_err.hist(errs, bins=24, alpha=0.6, label=dataset)
            elements.append({"type": "histogram", "axis": "error", "dataset": dataset,
                             "n": int(errs.size)})
    ax_cert.set_xlabel(f"certificate ({spec.method})")
    ax_err.set_xlabel("error")
    for ax in (ax_cert, ax_err):
        ax.set_ylabel("count")
        ax.legend(fontsize=7)
    return elements


def _error_fit(spec: FigureSpec, data: ReportData, ax) -> list:
    records = [r for r in _method_records(data, spec.method) if r.error is not None]
    if not records:
        raise ValueError("error-fit figure needs rows with ground-truth errors")
    fit = _fit_for(spec, data)
    a, b, c, band = fit["a"], fit["b"], fit["c"], fit["band"]
    certs = np.array([r.certificate for r in records])
    errs = np.array([r.error for r in records])
    grid = np.linspace(certs.min(), certs.max(), 200)
    curve = a * np.exp(-b * grid) + c
    ax.scatter(certs, errs, s=14, alpha=0.75, label="samples")
    ax.plot(grid, curve, color="black", label="fit")
    ax.fill_between(grid, np.maximum(curve - band, 0.0), curve + band, alpha=0.25,
                    color="gray", label=f"{fit.get('percentile', 75)}th pct band")
    predicted = a * np.exp(-b * certs) + c
    coverage = float((np.abs(predicted - errs) <= band).mean())
    ax.set_xlabel(f"certificate ({spec.method})")
    ax.set_ylabel("error")
    ax.legend(fontsize=7)
    return [
        {"type": "curve", "params": {"a": a, "b": b, "c": c}},
        {"type": "band", "halfwidth": band, "percentile": fit.get("percentile"),
         "coverage": coverage, "n": len(records)},
        {"type": "scatter", "dataset": "all", "n": len(records)},
    ]


def render(spec: FigureSpec) -> Path:
    """Render one figure; returns the image path.  A JSON sidecar with the
    plotted primitives is written next to it (<out>.json)."""
    data = load_report(spec.report)
    fig = plt.figure(figsize=(7.0, 4.6) if spec.kind == "histograms" else (5.4, 4.2))
    try:
        if spec.kind == "scatter-boundaries":
            elements = _scatter_boundaries(spec, data, fig.subplots())
        elif spec.kind == "histograms":
            elements = _histograms(spec, data, fig)
        else:
            elements = _error_fit(spec, data, fig.subplots())
        for ax in fig.get_axes():
            ax.set_xscale(spec.xscale)
            ax.set_yscale(spec.yscale)
        out = Path(spec.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, format=out.suffix.lstrip(".") or "svg",
                    metadata={"Date": None} if out.suffix == ".svg" else None)
    finally:
        plt.close(fig)
    sidecar = {
        "kind": spec.kind,
        "method": spec.method,
        "report": Path(spec.report).name,
        "n_records": len(data.records),
        "elements": elements,
        "scales": {"x": spec.xscale, "y": spec.yscale},
    }
    sidecar_path = Path(str(out) + ".json")
    sidecar_path.write_text(json.dumps(sidecar, sort_keys=True, indent=1) + "\n")
    return out
