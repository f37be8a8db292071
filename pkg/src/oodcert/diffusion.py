"""Variance-exploding diffusion machinery.

Forward process adds Gaussian noise of growing standard deviation sigma(t)
without rescaling the state; the exponential schedule interpolates
geometrically between sigma_min and sigma_max over t in [0, 1] (data at
t = 0, prior at t = 1).  The denoiser is trained by denoising score
matching; the score follows from Tweedie's formula

    s(z; sigma) = (D(z; sigma) - z) / sigma**2.

Samplers integrate the probability-flow ODE

    dz/dt = -1/2 * d(sigma^2)/dt * s(z; sigma(t))

with a fixed-step RK 3/8 scheme, or the reverse SDE with Euler-Maruyama.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffcore.tensor import NumericalOverflowError, Tensor
from .rng import stream

__all__ = [
    "NoiseSchedule",
    "Denoiser",
    "preconditioned",
    "precondition_constants",
    "dsm_loss",
    "dsm_weight",
    "score_from_denoise",
    "sample_ode",
    "sample_sde",
    "RK38_TABLEAU",
    "RK45_TABLEAU",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Exponential noise schedule sigma(t) = sigma_min * (sigma_max/sigma_min)**t."""

    sigma_min: float = 0.01
    sigma_max: float = 20.0
    kind: str = "exponential"

    def __post_init__(self):
        if self.kind != "exponential":
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (self.sigma_min > 0 and self.sigma_max > self.sigma_min):
            raise ValueError(f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")

    @property
    def log_ratio(self) -> float:
        return float(np.log(self.sigma_max / self.sigma_min))

    def sigma(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError(f"t outside [0, 1]: {t}")
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t

    def dsigma2_dt(self, t):
        # d/dt sigma(t)^2 = 2 ln(sigma_max/sigma_min) sigma(t)^2
        s = self.sigma(t)
        return 2.0 * self.log_ratio * s * s

    def sample_sigma(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Log-uniform sigma draws, matching the exponential schedule's measure."""
        u = rng.uniform(0.0, 1.0, size=n)
        return self.sigma(u)


def precondition_constants(sigma, sigma_data: float = 1.0):
    """EDM-style scaling constants (c_skip, c_out, c_in, c_noise) for a noise level."""
    sigma = np.asarray(sigma, dtype=np.float64)
    s2 = sigma * sigma + sigma_data * sigma_data
    c_skip = sigma_data * sigma_data / s2
    c_out = sigma * sigma_data / np.sqrt(s2)
    c_in = 1.0 / np.sqrt(s2)
    c_noise = np.log(sigma) / 4.0
    return c_skip, c_out, c_in, c_noise


def _bcast(values: np.ndarray, ndim: int) -> np.ndarray:
    """Reshape per-sample scalars (B,) for broadcasting against (B, *shape)."""
    values = np.asarray(values)
    if values.dtype.kind != "f":
        values = values.astype(np.float64)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape + (1,) * (ndim - 1))


def preconditioned(backbone: Callable, z, sigma, sigma_data: float = 1.0):
    """D(z; sigma) = c_skip z + c_out * F(c_in z, c_noise).

    Works on both plain arrays and autodiff Tensors (training path); the
    backbone receives the scaled state and the per-sample noise embedding
    scalar c_noise.
    """
    ndim = z.ndim
    dtype = z.dtype if hasattr(z, "dtype") else np.float64
    sigma = np.atleast_1d(np.asarray(sigma, dtype=np.float64))
    c_skip, c_out, c_in, c_noise = precondition_constants(sigma, sigma_data)
    # match the state dtype so f32 training stays f32 end to end
    c_skip, c_out, c_in = (c.astype(dtype) for c in (c_skip, c_out, c_in))
    f = backbone(_bcast(c_in, ndim) * z, c_noise)
    return _bcast(c_skip, ndim) * z + _bcast(c_out, ndim) * f


class Denoiser:
    """Denoiser built from a raw backbone with EDM preconditioning.

    `backbone(z_scaled, c_noise) -> array` must accept batched arrays
    (B, *shape) plus a (B,) conditioning vector.  Calls are pure numpy;
    training goes through `preconditioned` with a Tensor-valued backbone.
    """

    def __init__(self, backbone: Callable[[np.ndarray, np.ndarray], np.ndarray],
                 schedule: NoiseSchedule, sigma_data: float = 1.0):
        self.backbone = backbone
        self.schedule = schedule
        self.sigma_data = float(sigma_data)

    def __call__(self, z: np.ndarray, sigma) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        out = preconditioned(self.backbone, z, sigma, self.sigma_data)
        return np.asarray(out)

    def score(self, z: np.ndarray, sigma) -> np.ndarray:
        """Tweedie score: (D(z; sigma) - z) / sigma^2."""
        z = np.asarray(z, dtype=np.float64)
        d = self(z, sigma)
        if not np.isfinite(d).all():
            raise NumericalOverflowError("denoiser produced non-finite output")
        s2 = _bcast(np.atleast_1d(np.asarray(sigma, dtype=np.float64)) ** 2, z.ndim)
        return (d - z) / s2


def score_from_denoise(denoise_fn: Callable, z: np.ndarray, sigma) -> np.ndarray:
    """Tweedie score for any callable with the D(z, sigma) signature."""
    d = denoise_fn(z, sigma)
    s2 = _bcast(np.atleast_1d(np.asarray(sigma, dtype=np.float64)) ** 2, np.asarray(z).ndim)
    return (d - z) / s2


def dsm_weight(sigma, sigma_data: float = 1.0):
    """Loss weight lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma sigma_data)^2."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return (sigma ** 2 + sigma_data ** 2) / (sigma * sigma_data) ** 2


def dsm_loss(denoise_fn: Callable, batch, sigmas, noise, sigma_data: float = 1.0):
    """Denoising-score-matching loss.

    mean_i lambda(sigma_i) * || D(z_i + sigma_i eps_i; sigma_i) - z_i ||^2
    with the norm summed over all field elements.  `denoise_fn` may return a
    Tensor (training) or an array (evaluation); the loss type follows.
    """
    batch_arr = batch.data if isinstance(batch, Tensor) else np.asarray(batch)
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=batch_arr.dtype))
    noise = np.asarray(noise)
    if noise.shape != batch_arr.shape:
        raise ValueError(f"noise shape {noise.shape} != batch shape {batch_arr.shape}")
    z_noisy = batch_arr + _bcast(sigmas, batch_arr.ndim).astype(batch_arr.dtype) * noise
    d = denoise_fn(z_noisy, sigmas)
    diff = d - batch_arr
    sq = diff * diff
    elem_axes = tuple(range(1, batch_arr.ndim))
    per_sample = sq.sum(axis=elem_axes) if elem_axes else sq
    lam = dsm_weight(sigmas, sigma_data).astype(batch_arr.dtype)
    weighted = per_sample * lam
    return weighted.mean()


# ---------------------------------------------------------------------------
# fixed-step explicit Runge-Kutta tableaus
# ---------------------------------------------------------------------------

# classic 3/8 rule (4th order)
RK38_TABLEAU = (
    [(1.0 / 3.0, (1.0 / 3.0,)),
     (2.0 / 3.0, (-1.0 / 3.0, 1.0)),
     (1.0, (1.0, -1.0, 1.0))],
    (1.0 / 8.0, 3.0 / 8.0, 3.0 / 8.0, 1.0 / 8.0),
)

# Dormand-Prince 5th-order weights, run at a fixed step
RK45_TABLEAU = (
    [(1.0 / 5.0, (1.0 / 5.0,)),
     (3.0 / 10.0, (3.0 / 40.0, 9.0 / 40.0)),
     (4.0 / 5.0, (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0)),
     (8.0 / 9.0, (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0)),
     (1.0, (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0))],
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0),
)


def _rk_fixed_step(f, z, t, h, tableau):
    """One explicit RK step of dz/dt = f(z, t); returns the new state."""
    stages, weights = tableau
    ks = [f(z, t)]
    for c, row in stages:
        zs = z
        for a, k in zip(row, ks):
            if a != 0.0:
                zs = zs + (h * a) * k
        ks.append(f(zs, t + c * h))
    out = z
    for w, k in zip(weights, ks):
        if w != 0.0:
            out = out + (h * w) * k
    return out


def _prior_draws(n: int, shape: tuple, sigma_max: float, seed: int) -> np.ndarray:
    z = np.empty((n,) + tuple(shape), dtype=np.float64)
    for i in range(n):
        z[i] = stream(seed, i).standard_normal(size=shape) * sigma_max
    return z


def sample_ode(denoiser, n: int, steps: int, seed: int, shape: tuple,
               tableau=RK38_TABLEAU) -> np.ndarray:
    """Draw n samples by integrating the probability-flow ODE from t=1 to t=0.

    Initial states are N(0, sigma_max^2 I) draws from per-sample streams
    keyed by (seed, sample index); the integration itself is deterministic.
    """
    if steps < 8:
        raise ValueError(f"steps >= 8 required, got {steps}")
    sched = denoiser.schedule
    z = _prior_draws(n, shape, sched.sigma_max, seed)

    def f(state, t):
        t = min(max(t, 0.0), 1.0)
        return -0.5 * sched.dsigma2_dt(t) * denoiser.score(state, sched.sigma(t))

    h = -1.0 / steps
    t = 1.0
    for k in range(steps):
        z = _rk_fixed_step(f, z, t, h, tableau)
        t = 1.0 + (k + 1) * h
        if not np.isfinite(z).all():
            raise NumericalOverflowError(f"ODE sampling diverged at t={t:.4f}")
    return z


def sample_sde(denoiser, n: int, steps: int, seed: int, shape: tuple) -> np.ndarray:
    """Euler-Maruyama integration of the reverse variance-exploding SDE.

    Shares the marginals of the ODE sampler in the many-steps limit.  All
    randomness (initial state and per-step increments) comes from per-sample
    streams, so output is bit-identical for a fixed seed.
    """
    if steps < 8:
        raise ValueError(f"steps >= 8 required, got {steps}")
    sched = denoiser.schedule
    shape = tuple(shape)
    z = np.empty((n,) + shape, dtype=np.float64)
    xi = np.empty((n, steps) + shape, dtype=np.float64)
    for i in range(n):
        rng = stream(seed, i)
        z[i] = rng.standard_normal(size=shape) * sched.sigma_max
        xi[i] = rng.standard_normal(size=(steps,) + shape)
    ts = np.linspace(1.0, 0.0, steps + 1)
    for j in range(steps):
        s_hi = float(sched.sigma(ts[j]))
        s_lo = float(sched.sigma(ts[j + 1]))
        delta = s_hi * s_hi - s_lo * s_lo
        z = z + delta * denoiser.score(z, s_hi) + np.sqrt(delta) * xi[:, j]
        if not np.isfinite(z).all():
            raise NumericalOverflowError(f"SDE sampling diverged at t={ts[j + 1]:.4f}")
    return z
