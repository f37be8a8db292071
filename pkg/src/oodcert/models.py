"""Model zoo (small MLP, small convolutional encoder-decoder) and training.

Both the regression task and the diffusion denoiser share the same
architectures and harness; denoisers additionally take a scalar noise-level
conditioning input injected as a learned per-channel embedding.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import Checkpoint, OptState, ParamSet, Tensor
from .diffcore.tensor import NumericalOverflowError
from .diffusion import Denoiser, NoiseSchedule, dsm_loss, preconditioned
from .rng import stream

__all__ = [
    "ModelSpec", "TrainConfig",
    "init_params", "forward", "count_params", "predict",
    "train_regressor", "train_denoiser", "train_classifier_core",
    "backbone_from_checkpoint", "denoiser_from_checkpoint",
]

_ACTIVATIONS = {"silu": dc.silu, "tanh": dc.tanh, "relu": dc.relu}
_COND_FEATURES = 16  # fourier features of the conditioning scalar


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description serialized into every checkpoint."""

    arch: str                      # "mlp" | "conv"
    in_shape: tuple
    out_shape: tuple
    hidden: tuple = (64, 64)
    activation: str = "silu"
    cond: bool = False             # scalar conditioning (noise level / lead time)
    cond_dim: int = 32

    def __post_init__(self):
        if self.arch not in ("mlp", "conv"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "in_shape", tuple(self.in_shape))
        object.__setattr__(self, "out_shape", tuple(self.out_shape))
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.arch == "conv":
            if len(self.in_shape) != 3 or len(self.out_shape) != 3:
                raise ValueError("conv models need (C, H, W) shapes")
            if len(self.hidden) < 2:
                raise ValueError("conv models need at least 2 levels")
            depth = len(self.hidden) - 1
            if self.in_shape[1] % (2 ** depth) or self.in_shape[2] % (2 ** depth):
                raise ValueError(f"spatial dims {self.in_shape[1:]} not divisible by 2^{depth}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["in_shape"] = list(self.in_shape)
        d["out_shape"] = list(self.out_shape)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(arch=d["arch"], in_shape=tuple(d["in_shape"]), out_shape=tuple(d["out_shape"]),
                   hidden=tuple(d["hidden"]), activation=d["activation"], cond=d["cond"],
                   cond_dim=d["cond_dim"])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    lr_schedule: str = "cosine"    # constant | cosine
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    seed: int = 0
    precision: str = "f64"         # f32 | f64
    loss: str = "l1"               # l1 | l2 (regression only)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs >= 1 required")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"unknown loss {self.loss!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------

def _dense_init(rng, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    return (rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)).astype(dtype)


def _conv_init(rng, c_out: int, c_in: int, k: int, dtype) -> np.ndarray:
    # channels-last kernel layout (kh, kw, C_in, C_out)
    return (rng.standard_normal((k, k, c_in, c_out)) / math.sqrt(c_in * k * k)).astype(dtype)


def init_params(spec: ModelSpec, seed: int, dtype=np.float64) -> ParamSet:
    """Initialize all weights; the output layer starts at zero so the model's
    initial prediction is its output bias."""
    rng = stream(seed, 0)
    ps = ParamSet()

    def add(name, arr):
        ps.add(name, arr.astype(dtype), requires_grad=True)

    if spec.cond:
        add("cond.embed.w", _dense_init(rng, _COND_FEATURES, spec.cond_dim, dtype))
        add("cond.embed.b", np.zeros(spec.cond_dim))

    if spec.arch == "mlp":
        d_in = int(np.prod(spec.in_shape))
        d_out = int(np.prod(spec.out_shape))
        prev = d_in
        for i, width in enumerate(spec.hidden):
            add(f"mlp.{i}.w", _dense_init(rng, prev, width, dtype))
            add(f"mlp.{i}.b", np.zeros(width))
            if spec.cond:
                add(f"mlp.{i}.cond", _dense_init(rng, spec.cond_dim, width, dtype))
            prev = width
        add("mlp.out.w", np.zeros((prev, d_out)))
        add("mlp.out.b", np.zeros(d_out))
        return ps

    # conv encoder-decoder
    chans = spec.hidden
    c_in = spec.in_shape[0]
    c_out = spec.out_shape[0]

    def add_block(name, cin, cout):
        add(f"{name}.w", _conv_init(rng, cout, cin, 3, dtype))
        add(f"{name}.b", np.zeros(cout))
        add(f"{name}.ln_g", np.ones(cout))
        add(f"{name}.ln_b", np.zeros(cout))
        if spec.cond:
            add(f"{name}.cond", _dense_init(rng, spec.cond_dim, cout, dtype))

    add_block("conv.stem", c_in, chans[0])
    for lvl in range(1, len(chans)):
        add_block(f"conv.enc{lvl}", chans[lvl - 1], chans[lvl])
    add_block("conv.bott", chans[-1], chans[-1])
    for lvl in range(len(chans) - 2, -1, -1):
        add_block(f"conv.dec{lvl}", chans[lvl + 1] + chans[lvl], chans[lvl])
    add("conv.head.w", np.zeros((3, 3, chans[0], c_out)))
    add("conv.head.b", np.zeros(c_out))
    return ps


def count_params(spec: ModelSpec) -> int:
    return init_params(spec, seed=0).num_values()


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _cond_embedding(spec: ModelSpec, params: ParamSet, cond: Tensor | np.ndarray):
    """Fourier features of the scalar condition -> learned embedding vector."""
    c = cond.data if isinstance(cond, Tensor) else np.asarray(cond, dtype=np.float64)
    freqs = 2.0 ** np.arange(_COND_FEATURES // 2)
    feats = np.concatenate([np.sin(c[:, None] * freqs), np.cos(c[:, None] * freqs)], axis=1)
    e = dc.matmul(Tensor(feats.astype(params["cond.embed.w"].dtype)), params["cond.embed.w"]) + params["cond.embed.b"]
    return dc.silu(e)


def forward(spec: ModelSpec, params: ParamSet, x: Tensor, cond=None) -> Tensor:
    """Pure forward pass; batched input (B, *in_shape) -> (B, *out_shape)."""
    act = _ACTIVATIONS[spec.activation]
    if spec.cond:
        if cond is None:
            raise ValueError("model requires a conditioning scalar")
        emb = _cond_embedding(spec, params, cond)
    else:
        emb = None

    if spec.arch == "mlp":
        b = x.shape[0]
        h = dc.reshape(x, (b, int(np.prod(spec.in_shape))))
        for i in range(len(spec.hidden)):
            h = dc.matmul(h, params[f"mlp.{i}.w"]) + params[f"mlp.{i}.b"]
            if emb is not None:
                h = h + dc.matmul(emb, params[f"mlp.{i}.cond"])
            h = act(h)
        out = dc.matmul(h, params["mlp.out.w"]) + params["mlp.out.b"]
        return dc.reshape(out, (b,) + spec.out_shape)

    # conv path runs channels-last internally; layer norm over the channel
    # axis is then a plain last-axis normalization
    def block(name, h):
        h = dc.conv2d_nhwc(h, params[f"{name}.w"], params[f"{name}.b"], padding="same")
        if emb is not None:
            bias = dc.matmul(emb, params[f"{name}.cond"])
            h = h + dc.reshape(bias, (bias.shape[0], 1, 1, bias.shape[1]))
        h = dc.layer_norm(h, params[f"{name}.ln_g"], params[f"{name}.ln_b"])
        return act(h)

    chans = spec.hidden
    h = dc.transpose(x, (0, 2, 3, 1))
    h = block("conv.stem", h)
    skips = [h]
    for lvl in range(1, len(chans)):
        h = dc.avg_pool2_nhwc(h)
        h = block(f"conv.enc{lvl}", h)
        if lvl < len(chans) - 1:
            skips.append(h)
    h = block("conv.bott", h)
    for lvl in range(len(chans) - 2, -1, -1):
        h = dc.upsample2_nhwc(h)
        h = dc.concat([h, skips[lvl]], axis=3)
        h = block(f"conv.dec{lvl}", h)
    h = dc.conv2d_nhwc(h, params["conv.head.w"], params["conv.head.b"], padding="same")
    return dc.transpose(h, (0, 3, 1, 2))


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def predict(ckpt: Checkpoint, x: np.ndarray, cond: float | None = None,
            use_ema: bool = True) -> np.ndarray:
    """Deterministic forward pass through a trained checkpoint.

    Accepts a single sample (*in_shape) or a batch (B, *in_shape); returns
    the matching rank.  Raises on shape mismatch or non-finite output.
    """
    spec = ModelSpec.from_dict(ckpt.meta["model_spec"])
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == spec.in_shape
    if single:
        x = x[None]
    if x.shape[1:] != spec.in_shape:
        raise ValueError(f"input shape {x.shape[1:]} != model input shape {spec.in_shape}")
    params = (ckpt.ema if use_ema else ckpt.params).astype(np.float64)
    cond_arr = None
    if spec.cond:
        if cond is None:
            raise ValueError("model requires a conditioning scalar")
        cond_arr = np.full(x.shape[0], float(cond))
    with dc.no_grad():
        out = forward(spec, params, Tensor(x), cond_arr)
    y = out.data
    if not np.isfinite(y).all():
        raise NumericalOverflowError("model produced non-finite output")
    return y[0] if single else y


def backbone_from_checkpoint(ckpt: Checkpoint, use_ema: bool = True) -> Callable:
    """Raw backbone callable (z_scaled, c_noise) -> array for the Denoiser."""
    spec = ModelSpec.from_dict(ckpt.meta["model_spec"])
    if not spec.cond:
        raise ValueError("denoiser backbones must be noise-conditioned")
    params = (ckpt.ema if use_ema else ckpt.params).astype(np.float64)

    def backbone(z: np.ndarray, c_noise: np.ndarray) -> np.ndarray:
        with dc.no_grad():
            out = forward(spec, params, Tensor(z), np.asarray(c_noise, dtype=np.float64))
        return out.data

    return backbone


def denoiser_from_checkpoint(ckpt: Checkpoint, schedule: NoiseSchedule | None = None,
                             use_ema: bool = True) -> Denoiser:
    if schedule is None:
        sched_meta = ckpt.meta.get("schedule")
        schedule = NoiseSchedule(**sched_meta) if sched_meta else NoiseSchedule()
    sigma_data = float(ckpt.meta.get("sigma_data", 1.0))
    return Denoiser(backbone_from_checkpoint(ckpt, use_ema), schedule, sigma_data)


# ---------------------------------------------------------------------------
# training harness
# ---------------------------------------------------------------------------

def _lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.lr
    frac = step / max(total_steps - 1, 1)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def _check_loss(value: float, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise NumericalOverflowError(
            f"training diverged: loss non-finite at epoch {epoch}, step {step}")


def _run_training(params: ParamSet, loss_fn, n_samples: int, cfg: TrainConfig):
    """Shared minibatch loop; loss_fn(params, indices, rng) -> scalar Tensor."""
    if cfg.batch_size > n_samples:
        raise ValueError(f"batch size {cfg.batch_size} exceeds dataset size {n_samples}")
    state = OptState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                                eps=cfg.eps, weight_decay=cfg.weight_decay)
    ema = params.copy()
    steps_per_epoch = n_samples // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    loss_curve = []
    step = 0
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, 1, epoch).permutation(n_samples)
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            rng = stream(cfg.seed, 2, epoch, b)
            loss_value = [None]

            def objective(p):
                loss = loss_fn(p, idx, rng)
                loss_value[0] = float(loss.data)
                return loss

            try:
                grads = dc.grad(objective, params)
            except NumericalOverflowError as exc:
                raise NumericalOverflowError(
                    f"training diverged at epoch {epoch}, step {b}: {exc}") from exc
            _check_loss(loss_value[0], epoch, b)
            params, state = dc.adam_step(params, grads, state, lr=_lr_at(cfg, step, total_steps))
            ema = dc.ema_update(ema, params, cfg.ema_decay)
            epoch_loss += loss_value[0]
            step += 1
        loss_curve.append(epoch_loss / steps_per_epoch)
    return params, ema, loss_curve


def train_regressor(spec: ModelSpec, dataset, cfg: TrainConfig) -> Checkpoint:
    """Fit the regression model on normalized (input, output) pairs.

    The dataset's normalization stats are computed here if absent (training
    split); everything downstream operates in normalized space.
    """
    if dataset.normalization is None:
        dataset.compute_normalization()
    dtype = cfg.dtype
    x = dataset.normalized_inputs().reshape((len(dataset),) + spec.in_shape).astype(dtype)
    y = dataset.normalized_outputs().reshape((len(dataset),) + spec.out_shape).astype(dtype)
    params = init_params(spec, cfg.seed, dtype=dtype)

    def loss_fn(p, idx, rng):
        pred = forward(spec, p, Tensor(x[idx]), None)
        diff = pred - y[idx]
        return dc.absolute(diff).mean() if cfg.loss == "l1" else (diff * diff).mean()

    params, ema, curve = _run_training(params, loss_fn, len(dataset), cfg)
    meta = {
        "kind": "regressor",
        "model_spec": spec.to_dict(),
        "train_config": cfg.to_dict(),
        "loss_curve": curve,
        "normalization": dataset.normalization,
    }
    return Checkpoint(params=params, ema=ema, meta=meta)


def train_classifier_core(spec: ModelSpec, x: np.ndarray, labels: np.ndarray,
                          cfg: TrainConfig) -> Checkpoint:
    """Cross-entropy training for integer-labeled inputs (used by the OODC baseline)."""
    dtype = cfg.dtype
    x = np.asarray(x, dtype=dtype).reshape((len(x),) + spec.in_shape)
    labels = np.asarray(labels, dtype=int)
    n_classes = int(np.prod(spec.out_shape))
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels out of range for {n_classes} classes")
    onehot = np.eye(n_classes, dtype=dtype)[labels]
    params = init_params(spec, cfg.seed, dtype=dtype)

    def loss_fn(p, idx, rng):
        logits = forward(spec, p, Tensor(x[idx]), None)
        picked = (dc.log_softmax(logits) * onehot[idx]).sum(axis=1)
        return -picked.mean()

    params, ema, curve = _run_training(params, loss_fn, len(x), cfg)
    ckpt = Checkpoint(params=params, ema=ema, meta={
        "kind": "classifier",
        "model_spec": spec.to_dict(),
        "train_config": cfg.to_dict(),
        "loss_curve": curve,
    })
    logits = predict(ckpt, x.astype(np.float64))
    ckpt.meta["train_accuracy"] = float((logits.argmax(axis=-1) == labels).mean())
    return ckpt


def train_denoiser(spec: ModelSpec, joint: np.ndarray, cfg: TrainConfig,
                   schedule: NoiseSchedule | None = None, sigma_data: float = 1.0,
                   normalization: dict | None = None) -> Checkpoint:
    """Fit the diffusion denoiser on normalized joint states (N, *shape).

    Noise levels are drawn log-uniformly on [sigma_min, sigma_max]; the loss
    is weighted denoising score matching around the EDM preconditioning.
    """
    if not spec.cond:
        raise ValueError("denoiser spec must enable scalar conditioning")
    schedule = schedule or NoiseSchedule()
    dtype = cfg.dtype
    z = np.asarray(joint, dtype=dtype).reshape((len(joint),) + spec.in_shape)

    params = init_params(spec, cfg.seed, dtype=dtype)

    def loss_fn(p, idx, rng):
        batch = z[idx]
        sigmas = schedule.sample_sigma(rng, len(idx))
        noise = rng.standard_normal(size=batch.shape).astype(dtype)

        def denoise_fn(z_noisy, s):
            def backbone(z_scaled, c_noise):
                return forward(spec, p, z_scaled if isinstance(z_scaled, Tensor) else Tensor(z_scaled),
                               c_noise)
            return preconditioned(backbone, Tensor(z_noisy.astype(dtype)), s, sigma_data)

        return dsm_loss(denoise_fn, batch, sigmas, noise, sigma_data)

    params, ema, curve = _run_training(params, loss_fn, len(z), cfg)
    meta = {
        "kind": "denoiser",
        "model_spec": spec.to_dict(),
        "train_config": cfg.to_dict(),
        "loss_curve": curve,
        "schedule": {"sigma_min": schedule.sigma_min, "sigma_max": schedule.sigma_max,
                     "kind": schedule.kind},
        "sigma_data": sigma_data,
        "normalization": normalization,
    }
    return Checkpoint(params=params, ema=ema, meta=meta)
