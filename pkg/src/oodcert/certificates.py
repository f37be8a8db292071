"""Trajectory-statistic certificate family, OODC baseline, and data transforms.

The unified certificate over the probability-flow trajectory is

    a(Y) = alpha ||sum_k eps_k||^p + beta ||sum_k d eps_k / dt||^p
         + gamma sum_k ||eps_k||^p

with eps(Y_t; t) = -sigma_t * s(Y_t; t) the rescaled score.  Toggle presets
recover the published baselines; larger values indicate more OOD for every
member of the family (opposite sign to the likelihood certificate).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import Checkpoint
from .likelihood import CertificateRecord, LikelihoodResult, SolverConfig, joint_state, log_likelihood, relative_l1
from .models import ModelSpec, TrainConfig, forward, init_params, predict, train_classifier_core
from .rng import stream

__all__ = [
    "CertificateMethod", "Trajectory", "PRESETS", "FAMILY_METHODS",
    "unified_certificate", "certify_family", "certify_all",
    "oodc_train", "oodc_predict", "perturb_labels", "mask_noise",
]

# (alpha, beta, gamma) toggles
PRESETS = {
    "JDPath": (0, 1, 0),
    "JSBDDM": (1, 1, 0),
    "JSFNS": (1, 0, 0),
    "JMSSM": (0, 0, 1),
}
FAMILY_METHODS = ("JLBC", "JDPath", "JSFNS", "JSBDDM", "JMSSM")


@dataclass(frozen=True)
class CertificateMethod:
    """One member of the unified certificate family."""

    tag: str
    alpha: int = 0
    beta: int = 0
    gamma: int = 0
    p: float = 2.0

    def __post_init__(self):
        for toggle in (self.alpha, self.beta, self.gamma):
            if toggle not in (0, 1):
                raise ValueError("toggles must be in {0, 1}")
        if self.p <= 0:
            raise ValueError("norm exponent must be positive")

    @classmethod
    def preset(cls, tag: str, p: float = 2.0) -> "CertificateMethod":
        if tag not in PRESETS:
            raise ValueError(f"unknown preset {tag!r}; choose from {sorted(PRESETS)}")
        a, b, g = PRESETS[tag]
        return cls(tag=tag, alpha=a, beta=b, gamma=g, p=p)


@dataclass
class Trajectory:
    """Ordered (t_k, z_k, eps_k) states from one probability-flow solve."""

    points: list

    def __post_init__(self):
        if not self.points:
            raise ValueError("trajectory must contain at least one point")
        ts = [p.t for p in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory times must be strictly increasing")
        for p in self.points:
            if np.asarray(p.eps).shape != np.asarray(p.z).shape:
                raise ValueError("rescaled score shape must match state shape")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_result(cls, result: LikelihoodResult) -> "Trajectory":
        return cls(points=list(result.trajectory))


def _norm_p(v: np.ndarray, p: float) -> float:
    return float(np.sqrt((v * v).sum()) ** p)


def unified_certificate(traj: Trajectory, method: CertificateMethod) -> float:
    """Evaluate the toggled sum over a trajectory; larger = more OOD.

    The time derivative term uses forward differences on the trajectory grid
    and therefore needs at least two points.
    """
    eps = np.stack([np.asarray(p.eps, dtype=np.float64) for p in traj.points])
    value = 0.0
    if method.alpha:
        value += _norm_p(eps.sum(axis=0), method.p)
    if method.beta:
        if len(traj) < 2:
            raise ValueError("time-derivative term needs at least 2 trajectory points")
        ts = np.array([p.t for p in traj.points])
        dt = (ts[1:] - ts[:-1]).reshape((-1,) + (1,) * (eps.ndim - 1))
        deriv = (eps[1:] - eps[:-1]) / dt
        value += _norm_p(deriv.sum(axis=0), method.p)
    if method.gamma:
        value += float(sum(_norm_p(e, method.p) for e in eps))
    return value


def certify_family(regressor: Checkpoint, denoiser, x: np.ndarray, method: CertificateMethod | str,
                   cfg: SolverConfig, sample_id: int = 0, dataset: str = "",
                   y_true: np.ndarray | None = None, cond: float | None = None) -> CertificateRecord:
    """Certificate for one family member, reusing the likelihood trajectory."""
    records = certify_all(regressor, denoiser, x, [method], cfg, sample_id=sample_id,
                          dataset=dataset, y_true=y_true, cond=cond)
    return records[0]


def certify_all(regressor: Checkpoint, denoiser, x: np.ndarray,
                methods: Sequence[CertificateMethod | str], cfg: SolverConfig,
                sample_id: int = 0, dataset: str = "", y_true: np.ndarray | None = None,
                cond: float | None = None) -> list[CertificateRecord]:
    """All requested certificates for one sample from a single ODE solve.

    The probability-flow trajectory is computed once; every method reads the
    same (t, z, eps) sequence, so recomputation with the same seed reproduces
    each value bit-exactly.
    """
    by_name = {name.upper(): name for name in PRESETS}
    resolved = []
    for m in methods:
        if isinstance(m, str):
            key = m.upper()
            if key == "JLBC":
                resolved.append(CertificateMethod(tag="JLBC"))
            elif key in by_name:
                resolved.append(CertificateMethod.preset(by_name[key]))
            else:
                raise ValueError(f"unknown certificate method {m!r}")
        else:
            resolved.append(m)
    y_pred = predict(regressor, x, cond=cond)
    z = joint_state(x, y_pred)
    want_traj = any(m.tag != "JLBC" for m in resolved)
    run_cfg = cfg if cfg.keep_trajectory == want_traj else \
        SolverConfig(method=cfg.method, steps=cfg.steps, divergence=cfg.divergence,
                     probes=cfg.probes, probe_dist=cfg.probe_dist, fd_epsilon=cfg.fd_epsilon,
                     seed=cfg.seed, keep_trajectory=want_traj)
    result = log_likelihood(denoiser, z, run_cfg, sample_id=sample_id)
    traj = Trajectory.from_result(result) if want_traj else None
    error = relative_l1(y_pred, y_true) if y_true is not None else None
    records = []
    for m in resolved:
        value = result.log_likelihood if m.tag == "JLBC" else unified_certificate(traj, m)
        records.append(CertificateRecord(sample_id=sample_id, dataset=dataset,
                                         method=m.tag, certificate=value, error=error))
    return records


# ---------------------------------------------------------------------------
# OODC classification baseline
# ---------------------------------------------------------------------------

def oodc_train(joint_samples: np.ndarray, labels: np.ndarray, spec: ModelSpec,
               cfg: TrainConfig) -> Checkpoint:
    """Supervised ID/OOD classifier on labeled (input, prediction) states.

    Labels: 1 = OOD, 0 = ID.  Of the M provided samples, floor(0.2 M) are
    reserved for validation and the rest train the model; both classes must
    be present in the training split.
    """
    joint_samples = np.asarray(joint_samples, dtype=np.float64)
    labels = np.asarray(labels)
    if len(joint_samples) != len(labels):
        raise ValueError("sample and label counts differ")
    if spec.out_shape != (2,):
        raise ValueError("OODC classifier spec must have out_shape (2,) logits")
    m = len(labels)
    n_val = int(np.floor(0.2 * m))
    order = stream(cfg.seed, 3).permutation(m)
    val_idx, train_idx = order[:n_val], order[n_val:]
    train_labels = labels[train_idx]
    if len(np.unique(train_labels)) < 2:
        raise ValueError("OODC training split must contain both ID and OOD samples")
    ckpt = train_classifier_core(spec, joint_samples[train_idx], train_labels.astype(int), cfg)
    val_acc = None
    if n_val:
        logits = predict(ckpt, joint_samples[val_idx])
        val_acc = float((logits.argmax(axis=-1) == labels[val_idx]).mean())
    ckpt.meta["kind"] = "oodc"
    ckpt.meta["split"] = {"train": int(m - n_val), "validation": int(n_val)}
    ckpt.meta["validation_accuracy"] = val_acc
    return ckpt


def oodc_predict(ckpt: Checkpoint, joint_samples: np.ndarray) -> np.ndarray:
    """Probability of the OOD class (label 1) for each joint state."""
    logits = predict(ckpt, np.asarray(joint_samples, dtype=np.float64))
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs[..., 1]


# ---------------------------------------------------------------------------
# label / segmentation transforms
# ---------------------------------------------------------------------------

def perturb_labels(logits: np.ndarray, resolution: int, temperature: float = 1.0,
                   seed: int = 0) -> np.ndarray:
    """Sample an s x s label channel with pixels i.i.d. categorical.

    Pixel class probabilities are softmax(logits / T); low-confidence
    predictions therefore scatter the label channel while confident ones stay
    nearly constant.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size < 2:
        raise ValueError("need a 1-D vector of at least 2 class logits")
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    scaled = logits / temperature
    scaled -= scaled.max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    rng = stream(seed, 0)
    flat = rng.choice(logits.size, size=resolution * resolution, p=probs)
    return flat.reshape(resolution, resolution).astype(np.float64)


def mask_noise(field: np.ndarray, semantic_mask: np.ndarray, seed: int = 0,
               variance: float = 0.025, enabled: bool = True) -> np.ndarray:
    """Replace non-semantic pixels with low-variance Gaussian noise.

    Training-time transform only; with `enabled=False` (ablation, or at
    inference) the field passes through unchanged.
    """
    field = np.asarray(field, dtype=np.float64)
    mask = np.asarray(semantic_mask, dtype=bool)
    if mask.shape != field.shape:
        raise ValueError(f"mask shape {mask.shape} != field shape {field.shape}")
    if not enabled:
        return field.copy()
    rng = stream(seed, 0)
    noise = rng.normal(0.0, np.sqrt(variance), size=field.shape)
    return np.where(mask, field, noise)
