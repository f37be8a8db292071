"""Analytic dataset generators and verification oracles.

Wave-equation fields have closed-form solutions (random sine modes with a
cosine time factor), the two 1-D toy problems exercise unbalanced inputs and
conditional complexity, and the Gaussian oracle provides exact densities,
perturbed scores, and the optimal denoiser for verifying likelihood code.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .diffusion import NoiseSchedule
from .fileio import atomic_write_bytes, atomic_write_text
from .rng import stream

__all__ = [
    "WaveParams", "DistSpec", "Dataset", "dataset_from_joint",
    "wave_initial", "wave_exact", "gen_wave_dataset",
    "gen_toy_bimodal", "gen_toy_piecewise_sine", "piecewise_sine",
    "GaussianOracle", "gaussian_oracle",
    "WAVE_TRAIN_RANGES", "WAVE_TEST_RANGES", "WAVE_TRAIN_RANGES_DESK", "WAVE_TEST_RANGES_DESK",
]

# (r_low, r_high, K_low, K_high); K bounds inclusive
WAVE_TRAIN_RANGES = (0.75, 0.85, 20, 28)
WAVE_TEST_RANGES = (0.675, 0.925, 16, 32)
# desk-scale: 32^2 grid, mode counts scaled down so all modes stay resolvable
WAVE_TRAIN_RANGES_DESK = (0.75, 0.85, 5, 7)
WAVE_TEST_RANGES_DESK = (0.675, 0.925, 4, 8)

WAVE_SPEED = 0.1
WAVE_TIME = 5.0


@dataclass(frozen=True)
class WaveParams:
    """Parameters of one random initial condition for the 2-D wave equation."""

    K: int
    r: float
    a: np.ndarray  # (K, K) coefficients in [-1, 1]
    c: float = WAVE_SPEED
    T: float = WAVE_TIME

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K >= 1 required, got {self.K}")
        a = np.asarray(self.a, dtype=np.float64)
        if a.shape != (self.K, self.K):
            raise ValueError(f"coefficient array must be ({self.K}, {self.K}), got {a.shape}")
        if np.abs(a).max() > 1.0 + 1e-12:
            raise ValueError("coefficients must lie in [-1, 1]")
        object.__setattr__(self, "a", a)


def grid_nodes(resolution: int) -> np.ndarray:
    """Cell-centred nodes (i + 0.5)/s on [0, 1] (avoids all-zero boundary rows)."""
    return (np.arange(resolution) + 0.5) / resolution


def _mode_table(params: WaveParams) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(1, params.K + 1, dtype=np.float64)
    lam = i[:, None] ** 2 + i[None, :] ** 2  # i^2 + j^2
    amp = np.pi * params.a * lam ** (-params.r)
    return amp, lam


def wave_initial(params: WaveParams, resolution: int) -> np.ndarray:
    """Evaluate pi * sum_ij a_ij (i^2+j^2)^(-r) sin(pi i x) sin(pi j y) on the grid."""
    x = grid_nodes(resolution)
    i = np.arange(1, params.K + 1, dtype=np.float64)
    sin_x = np.sin(np.pi * np.outer(i, x))  # (K, s)
    amp, _ = _mode_table(params)
    return sin_x.T @ amp @ sin_x


def wave_exact(params: WaveParams, t: float, resolution: int) -> np.ndarray:
    """Exact solution at time t: each mode scaled by cos(c pi t sqrt(i^2+j^2))."""
    if t < 0:
        raise ValueError(f"t >= 0 required, got {t}")
    x = grid_nodes(resolution)
    i = np.arange(1, params.K + 1, dtype=np.float64)
    sin_x = np.sin(np.pi * np.outer(i, x))
    amp, lam = _mode_table(params)
    factor = np.cos(params.c * np.pi * t * np.sqrt(lam))
    return sin_x.T @ (amp * factor) @ sin_x


# ---------------------------------------------------------------------------
# dataset container and file format
# ---------------------------------------------------------------------------

_OODD_MAGIC = b"OODD"
_OODD_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


@dataclass
class Dataset:
    """Paired inputs/outputs with per-sample metadata and normalization stats.

    Data is stored raw; `normalized_*` accessors apply the affine map derived
    from the training split (zero mean, unit variance per input/output group).
    """

    inputs: np.ndarray
    outputs: np.ndarray
    meta: list = field(default_factory=list)
    normalization: dict | None = None
    tag: str = ""
    seed: int = 0

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs must have equal sample counts")
        if self.meta and len(self.meta) != len(self.inputs):
            raise ValueError("metadata must cover every sample")

    def __len__(self) -> int:
        return len(self.inputs)

    def compute_normalization(self) -> dict:
        """Derive per-group affine stats from this dataset (call on the training split)."""
        stats = {}
        for key, arr in (("input", self.inputs), ("output", self.outputs)):
            stats[key] = {"mean": float(arr.mean()), "std": float(arr.std())}
            if stats[key]["std"] == 0.0:
                stats[key]["std"] = 1.0
        self.normalization = stats
        return stats

    def _require_norm(self) -> dict:
        if self.normalization is None:
            raise ValueError("dataset has no normalization stats; compute or attach them first")
        return self.normalization

    def normalized_inputs(self) -> np.ndarray:
        st = self._require_norm()["input"]
        return (self.inputs - st["mean"]) / st["std"]

    def normalized_outputs(self) -> np.ndarray:
        st = self._require_norm()["output"]
        return (self.outputs - st["mean"]) / st["std"]

    def denormalize_output(self, y: np.ndarray) -> np.ndarray:
        st = self._require_norm()["output"]
        return y * st["std"] + st["mean"]

    def joint(self) -> np.ndarray:
        """Normalized joint states (N, 2, *field) or (N, 2) for scalar pairs."""
        x, y = self.normalized_inputs(), self.normalized_outputs()
        return np.stack([x, y], axis=1)

    # -- file format: header + raw little-endian array, JSON sidecar --
    def save(self, path: str | Path) -> None:
        path = Path(path)
        data = np.stack([self.inputs, self.outputs], axis=1)
        arr = np.ascontiguousarray(data, dtype="<f8")
        header = bytearray()
        header += _OODD_MAGIC
        header += struct.pack("<I", _OODD_VERSION)
        header += struct.pack("<I", _DTYPE_CODES[arr.dtype])
        header += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            header += struct.pack("<I", dim)
        atomic_write_bytes(path, bytes(header) + arr.tobytes())
        sidecar = {
            "tag": self.tag,
            "seed": self.seed,
            "normalization": self.normalization,
            "samples": self.meta,
            "layout": {"axis": 1, "input_index": 0, "output_index": 1},
        }
        atomic_write_text(path.with_suffix(path.suffix + ".json"),
                          json.dumps(sidecar, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        raw = path.read_bytes()
        if raw[:4] != _OODD_MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic {raw[:4]!r})")
        version, code, ndim = struct.unpack("<III", raw[4:16])
        if version != _OODD_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        dims = struct.unpack(f"<{ndim}I", raw[16:16 + 4 * ndim])
        dtype = _CODE_DTYPES[code]
        arr = np.frombuffer(raw, dtype=dtype, offset=16 + 4 * ndim).reshape(dims).copy()
        sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        return cls(
            inputs=arr[:, sidecar["layout"]["input_index"]],
            outputs=arr[:, sidecar["layout"]["output_index"]],
            meta=sidecar.get("samples") or [],
            normalization=sidecar.get("normalization"),
            tag=sidecar.get("tag", ""),
            seed=sidecar.get("seed", 0),
        )


def dataset_from_joint(joint: np.ndarray, tag: str = "sampled", seed: int = 0) -> Dataset:
    """Wrap joint states (N, 2, *field) as a dataset (sampler output format)."""
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim < 2 or joint.shape[1] != 2:
        raise ValueError(f"joint states must have shape (N, 2, ...), got {joint.shape}")
    return Dataset(inputs=joint[:, 0].copy(), outputs=joint[:, 1].copy(),
                   meta=[{} for _ in range(len(joint))], tag=tag, seed=seed)


@dataclass(frozen=True)
class DistSpec:
    """A named sampling distribution plus its parameters."""

    tag: str
    n: int
    seed: int
    params: dict = field(default_factory=dict)

    KNOWN = ("wave-train", "wave-test", "toy-bimodal", "toy-piecewise-sine", "gaussian-oracle")

    def __post_init__(self):
        if self.tag not in self.KNOWN:
            raise ValueError(f"unknown distribution tag {self.tag!r}")
        if self.n < 1:
            raise ValueError("sample count must be >= 1")


def gen_wave_dataset(spec: DistSpec) -> Dataset:
    """Pairs (u0, u(., T)) with per-sample (K, r) metadata.

    Training ranges: r ~ U(0.75, 0.85), K ~ U_discrete over the configured
    band; the test distribution strictly contains the training one.
    """
    if spec.tag not in ("wave-train", "wave-test"):
        raise ValueError(f"expected a wave distribution, got {spec.tag!r}")
    desk = bool(spec.params.get("desk", True))
    resolution = int(spec.params.get("resolution", 32 if desk else 128))
    if spec.tag == "wave-train":
        r_lo, r_hi, k_lo, k_hi = WAVE_TRAIN_RANGES_DESK if desk else WAVE_TRAIN_RANGES
    else:
        r_lo, r_hi, k_lo, k_hi = WAVE_TEST_RANGES_DESK if desk else WAVE_TEST_RANGES
    c = float(spec.params.get("c", WAVE_SPEED))
    T = float(spec.params.get("T", WAVE_TIME))
    if 2 * k_hi >= resolution:
        raise ValueError(f"resolution {resolution} cannot resolve K up to {k_hi}")

    inputs = np.empty((spec.n, resolution, resolution))
    outputs = np.empty_like(inputs)
    meta = []
    for idx in range(spec.n):
        rng = stream(spec.seed, idx)
        K = int(rng.integers(k_lo, k_hi + 1))
        r = float(rng.uniform(r_lo, r_hi))
        a = rng.uniform(-1.0, 1.0, size=(K, K))
        params = WaveParams(K=K, r=r, a=a, c=c, T=T)
        inputs[idx] = wave_initial(params, resolution)
        outputs[idx] = wave_exact(params, T, resolution)
        meta.append({"K": K, "r": r})
    return Dataset(inputs=inputs, outputs=outputs, meta=meta, tag=spec.tag, seed=spec.seed)


_TARGET_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda x: x,
    "quadratic": lambda x: x * x,
    "sine": lambda x: np.sin(2.0 * x),
}


def gen_toy_bimodal(spec: DistSpec) -> Dataset:
    """Unbalanced bimodal inputs: N+ draws near +1 plus round(nu * N+) draws near -1.

    Targets are f(x) + eps with eps ~ N(0, noise_var); mode variances follow
    the N(mu, sigma^2) convention (0.5 means variance 0.5).
    """
    if spec.tag != "toy-bimodal":
        raise ValueError(f"expected toy-bimodal, got {spec.tag!r}")
    nu = float(spec.params.get("nu", 0.1))
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    n_pos = int(spec.params.get("n_pos", spec.n))
    if n_pos < 1:
        raise ValueError("n_pos >= 1 required")
    mode_std = float(np.sqrt(spec.params.get("mode_var", 0.5)))
    noise_std = float(np.sqrt(spec.params.get("noise_var", 0.1)))
    f = spec.params.get("f", "linear")
    fn = _TARGET_FUNCTIONS[f] if isinstance(f, str) else f

    n_neg = int(round(nu * n_pos))
    rng = stream(spec.seed, 0)
    x_pos = rng.normal(1.0, mode_std, size=n_pos)
    x_neg = rng.normal(-1.0, mode_std, size=n_neg)
    x = np.concatenate([x_pos, x_neg])
    y = fn(x) + rng.normal(0.0, noise_std, size=x.size)
    meta = [{"mode": "+"} for _ in range(n_pos)] + [{"mode": "-"} for _ in range(n_neg)]
    return Dataset(inputs=x[:, None], outputs=y[:, None], meta=meta, tag=spec.tag, seed=spec.seed)


def piecewise_sine(x: np.ndarray) -> np.ndarray:
    """sin(pi x / 2) for x < 0, sin(25 pi x) for x >= 0 (continuous at 0)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x < 0.0, np.sin(0.5 * np.pi * x), np.sin(25.0 * np.pi * x))


def gen_toy_piecewise_sine(n: int, seed: int) -> Dataset:
    """Noiseless pairs (x, f(x)) with x ~ U(-1, 1)."""
    if n < 1:
        raise ValueError("n >= 1 required")
    rng = stream(seed, 0)
    x = rng.uniform(-1.0, 1.0, size=n)
    y = piecewise_sine(x)
    meta = [{"branch": "smooth" if xi < 0 else "oscillatory"} for xi in x]
    return Dataset(inputs=x[:, None], outputs=y[:, None], meta=meta,
                   tag="toy-piecewise-sine", seed=seed)


# ---------------------------------------------------------------------------
# Gaussian verification oracle
# ---------------------------------------------------------------------------

class GaussianOracle:
    """Diagonal Gaussian with closed-form density, perturbed score and denoiser.

    Satisfies the denoiser interface (callable + `.score` + `.schedule`), so
    samplers and likelihood estimators can run against exact ground truth:
    the VE-perturbed score is s_sigma(z) = -(Sigma + sigma^2 I)^{-1} (z - mu).
    """

    def __init__(self, mean, var, schedule: NoiseSchedule | None = None):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.var = np.atleast_1d(np.asarray(var, dtype=np.float64))
        if self.var.shape != self.mean.shape:
            raise ValueError("mean and variance must have matching shapes")
        if np.any(self.var <= 0.0):
            raise ValueError("variances must be positive")
        self.schedule = schedule or NoiseSchedule()
        self.sigma_data = float(np.sqrt(self.var.mean()))

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, z: np.ndarray) -> np.ndarray:
        """Exact log N(z; mu, Sigma); z is (d,) or (B, d)."""
        z = np.asarray(z, dtype=np.float64)
        diff = z - self.mean
        quad = (diff * diff / self.var).sum(axis=-1)
        norm = 0.5 * (self.dim * np.log(2.0 * np.pi) + np.log(self.var).sum())
        return -0.5 * quad - norm

    def perturbed_log_density(self, z: np.ndarray, sigma: float) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        var = self.var + float(sigma) ** 2
        diff = z - self.mean
        quad = (diff * diff / var).sum(axis=-1)
        norm = 0.5 * (self.dim * np.log(2.0 * np.pi) + np.log(var).sum())
        return -0.5 * quad - norm

    def score(self, z: np.ndarray, sigma) -> np.ndarray:
        """Exact score of the sigma-perturbed distribution."""
        z = np.asarray(z, dtype=np.float64)
        sig = np.asarray(sigma, dtype=np.float64)
        if sig.ndim == 1:
            sig = sig.reshape((-1,) + (1,) * (z.ndim - 1))
        return -(z - self.mean) / (self.var + sig ** 2)

    def __call__(self, z: np.ndarray, sigma) -> np.ndarray:
        """Optimal denoiser (posterior mean) via Tweedie: D = z + sigma^2 s."""
        z = np.asarray(z, dtype=np.float64)
        sig = np.asarray(sigma, dtype=np.float64)
        if sig.ndim == 1:
            sig = sig.reshape((-1,) + (1,) * (z.ndim - 1))
        return z + sig ** 2 * self.score(z, sigma)

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = stream(seed, 0)
        return self.mean + np.sqrt(self.var) * rng.standard_normal(size=(n, self.dim))


def gaussian_oracle(mean, var, schedule: NoiseSchedule | None = None) -> GaussianOracle:
    return GaussianOracle(mean, var, schedule)
