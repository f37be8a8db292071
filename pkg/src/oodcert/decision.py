"""Decision boundaries, ID/CD/OOD classification, quadrant metrics, and the
a-posteriori exponential error fit.

Boundaries come from a small set of decision samples drawn from the training
distribution: the certificate threshold is median -/+ alpha * std (sign
depends on the certificate's orientation), the error threshold is the
(100 - beta)th percentile of decision errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DecisionBoundary", "QuadrantCounts", "ErrorFit",
    "certificate_boundary", "error_boundary", "make_boundary",
    "classify", "quadrant_metrics", "fit_error_curve", "predict_error",
    "percentile_band", "CRITICAL_ERROR",
]

# relative error at/above which a sample counts as a critical case
CRITICAL_ERROR = 1.0


@dataclass(frozen=True)
class DecisionBoundary:
    """Certificate and error thresholds plus the statistics they came from."""

    cert_threshold: float
    error_threshold: float | None
    median: float
    std: float
    alpha: float
    beta: float | None
    sign: int                 # -1: low certificate = OOD (likelihoods); +1: high = OOD
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "cert_threshold": self.cert_threshold, "error_threshold": self.error_threshold,
            "median": self.median, "std": self.std, "alpha": self.alpha, "beta": self.beta,
            "sign": self.sign, "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionBoundary":
        return cls(cert_threshold=d["cert_threshold"], error_threshold=d["error_threshold"],
                   median=d["median"], std=d["std"], alpha=d["alpha"], beta=d["beta"],
                   sign=int(d["sign"]), n_samples=int(d["n_samples"]))


@dataclass
class QuadrantCounts:
    """Positive = classified OOD; ground-truth positive = large error."""

    TP: int = 0
    FP: int = 0
    TN: int = 0
    FN: int = 0

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.TN + self.FN


def certificate_boundary(certs, alpha: float, sign: int = -1) -> float:
    """Threshold median + sign * alpha * std (population std, N denominator).

    sign=-1 suits likelihood-type certificates (low = OOD); sign=+1 suits the
    trajectory-statistic family (high = OOD).
    """
    certs = np.asarray(certs, dtype=np.float64)
    if certs.size < 2:
        raise ValueError("need at least 2 decision samples")
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    m = float(np.median(certs))
    sd = float(certs.std())  # population convention
    return m + sign * alpha * sd


def error_boundary(errors, beta: float) -> float:
    """(100 - beta)th percentile of decision errors, linearly interpolated."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("need at least 1 decision error")
    if not 0.0 < beta < 100.0:
        raise ValueError(f"beta must lie in (0, 100) percent, got {beta}")
    return float(np.percentile(errors, 100.0 - beta, method="linear"))


def make_boundary(certs, errors, alpha: float = 1.5, beta: float | None = 5.0,
                  sign: int = -1) -> DecisionBoundary:
    certs = np.asarray(certs, dtype=np.float64)
    threshold = certificate_boundary(certs, alpha, sign)
    e_b = None
    if errors is not None and beta is not None:
        e_b = error_boundary(errors, beta)
    return DecisionBoundary(
        cert_threshold=threshold, error_threshold=e_b,
        median=float(np.median(certs)), std=float(certs.std()),
        alpha=float(alpha), beta=beta, sign=sign, n_samples=int(certs.size),
    )


def classify(cert: float, boundary: DecisionBoundary) -> tuple[str, str]:
    """Coarse ID/OOD label plus the fine ID/CD/OOD label.

    ID keeps the boundary itself (cert exactly at the threshold is ID).  The
    critical band sits between alpha and 2*alpha deviations past the median;
    beyond that is pure OOD.
    """
    deviation = boundary.sign * (float(cert) - boundary.median)
    near = boundary.alpha * boundary.std
    far = 2.0 * boundary.alpha * boundary.std
    if deviation <= near:
        return "ID", "ID"
    if deviation < far:
        return "OOD", "CD"
    return "OOD", "OOD"


def quadrant_metrics(records, boundary: DecisionBoundary) -> dict:
    """ACC / FPR / FNR / FDR (and ARCB when critical cases exist).

    Every record needs a ground-truth error.  Positive = classified OOD;
    ground-truth positive = error strictly above the error threshold (ties
    count as small).  0/0 rates report as 0.  ARCB is the fraction of
    critical records (relative error >= 1) classified OOD, absent if there
    are none.
    """
    counts = QuadrantCounts()
    n_critical = 0
    n_critical_ood = 0
    if boundary.error_threshold is None:
        raise ValueError("boundary has no error threshold")
    for rec in records:
        if rec.error is None:
            raise ValueError(f"record {rec.sample_id} has no ground-truth error")
        label, _ = classify(rec.certificate, boundary)
        is_ood = label == "OOD"
        large = rec.error > boundary.error_threshold
        if is_ood and large:
            counts.TP += 1
        elif is_ood and not large:
            counts.FP += 1
        elif not is_ood and not large:
            counts.TN += 1
        else:
            counts.FN += 1
        if rec.error >= CRITICAL_ERROR:
            n_critical += 1
            n_critical_ood += is_ood

    def rate(num, den):
        return num / den if den else 0.0

    metrics = {
        "ACC": rate(counts.TP + counts.TN, counts.total),
        "FPR": rate(counts.FP, counts.FP + counts.TN),
        "FNR": rate(counts.FN, counts.FN + counts.TP),
        "FDR": rate(counts.FP, counts.FP + counts.TP),
        "counts": {"TP": counts.TP, "FP": counts.FP, "TN": counts.TN, "FN": counts.FN},
        "n": counts.total,
    }
    if n_critical:
        metrics["ARCB"] = n_critical_ood / n_critical
    return metrics


# ---------------------------------------------------------------------------
# a-posteriori exponential error fit
# ---------------------------------------------------------------------------

@dataclass
class ErrorFit:
    """Parameters of error(cert) = a * exp(-b * cert) + c with a percentile band."""

    a: float
    b: float
    c: float
    band: float
    percentile: float
    n_samples: int
    converged: bool = True
    residuals: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "c": self.c, "band": self.band,
                "percentile": self.percentile, "n_samples": self.n_samples,
                "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorFit":
        return cls(a=d["a"], b=d["b"], c=d["c"], band=d["band"], percentile=d["percentile"],
                   n_samples=int(d["n_samples"]), converged=bool(d["converged"]))


def _exp_model(certs: np.ndarray, a: float, b: float, c: float) -> np.ndarray:
    return a * np.exp(-b * certs) + c


def percentile_band(residuals, percentile: float) -> float:
    """Band half-width: the given percentile of absolute fit deviations."""
    residuals = np.abs(np.asarray(residuals, dtype=np.float64))
    return float(np.percentile(residuals, percentile, method="linear"))


def fit_error_curve(certs, errors, percentile: float = 75.0,
                    max_iter: int = 100, tol: float = 1e-12) -> ErrorFit:
    """Least-squares fit of a * exp(-b x) + c by Gauss-Newton.

    Initialization works in log space (c0 = 0.9 * min error, then a line fit
    of log(error - c0) against the certificate).  The band is the chosen
    percentile of absolute deviations between fit and data.  If the iteration
    fails to converge the best iterate is returned with `converged=False`.
    """
    certs = np.asarray(certs, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if certs.shape != errors.shape or certs.ndim != 1:
        raise ValueError("certs and errors must be matching 1-D arrays")
    if certs.size < 8:
        raise ValueError("need at least 8 points for the error fit")
    if np.any(errors < 0):
        raise ValueError("errors must be non-negative")

    spread = float(errors.max() - errors.min())
    if spread < 1e-12:
        # constant errors: c-only fallback with zero residual
        c = float(errors[0])
        return ErrorFit(a=0.0, b=0.0, c=c, band=0.0, percentile=percentile,
                        n_samples=certs.size, converged=True, residuals=[0.0] * certs.size)

    c0 = 0.9 * float(errors.min())
    shifted = np.maximum(errors - c0, 1e-12)
    slope, intercept = np.polyfit(certs, np.log(shifted), 1)
    theta = np.array([math.exp(intercept), -slope, c0])

    def sse(th):
        r = _exp_model(certs, *th) - errors
        return float((r * r).sum())

    best = theta.copy()
    best_sse = sse(theta)
    converged = False
    for _ in range(max_iter):
        a, b, c = theta
        e = np.exp(-b * certs)
        residual = a * e + c - errors
        jac = np.stack([e, -a * certs * e, np.ones_like(certs)], axis=1)
        step, *_ = np.linalg.lstsq(jac, -residual, rcond=None)
        # backtracking keeps Gauss-Newton from overshooting
        scale = 1.0
        for _ in range(30):
            candidate = theta + scale * step
            if sse(candidate) < best_sse:
                break
            scale *= 0.5
        candidate = theta + scale * step
        cand_sse = sse(candidate)
        if cand_sse < best_sse:
            best, best_sse = candidate.copy(), cand_sse
        if np.abs(scale * step).max() < tol * (1.0 + np.abs(theta).max()):
            theta = candidate
            converged = True
            break
        theta = candidate
    a, b, c = best
    deviations = np.abs(_exp_model(certs, a, b, c) - errors)
    band = percentile_band(deviations, percentile)
    return ErrorFit(a=float(a), b=float(b), c=float(c), band=band, percentile=percentile,
                    n_samples=certs.size, converged=converged, residuals=deviations.tolist())


def predict_error(fit: ErrorFit, cert: float) -> tuple[float, float, float]:
    """Error estimate with its percentile band; the lower bound clamps at 0."""
    estimate = fit.a * math.exp(-fit.b * float(cert)) + fit.c
    lower = max(estimate - fit.band, 0.0)
    upper = estimate + fit.band
    return estimate, lower, upper
