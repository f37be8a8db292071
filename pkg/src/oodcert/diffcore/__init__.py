"""Minimal reverse-mode autodiff engine, parameter containers, and optimizers."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .optim import OptState, adam_step, ema_update, grad
from .params import ParamSet
from .tensor import (
    NumericalOverflowError,
    Tensor,
    absolute,
    avg_pool2,
    avg_pool2_nhwc,
    concat,
    conv2d,
    conv2d_nhwc,
    exp,
    finite_checks,
    get_default_dtype,
    layer_norm,
    log,
    log_softmax,
    matmul,
    max_pool2,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    silu,
    softmax,
    sqrt,
    tanh,
    transpose,
    upsample2,
    upsample2_nhwc,
)

__all__ = [
    "Tensor", "ParamSet", "OptState", "Checkpoint", "NumericalOverflowError",
    "grad", "adam_step", "ema_update", "save_checkpoint", "load_checkpoint",
    "no_grad", "finite_checks", "set_default_dtype", "get_default_dtype",
    "concat", "conv2d", "avg_pool2", "max_pool2", "upsample2", "layer_norm",
    "conv2d_nhwc", "avg_pool2_nhwc", "upsample2_nhwc",
    "softmax", "log_softmax", "relu", "silu", "tanh", "exp", "log", "sqrt",
    "absolute", "matmul", "reshape", "transpose",
]
