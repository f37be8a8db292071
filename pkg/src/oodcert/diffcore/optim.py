"""Gradient computation and parameter updates (AdamW, EMA)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamSet
from .tensor import NumericalOverflowError, Tensor, finite_checks

__all__ = ["grad", "OptState", "adam_step", "ema_update"]


def grad(f: Callable[[ParamSet], Tensor], at: ParamSet) -> ParamSet:
    """Gradient of a scalar-valued expression with respect to every parameter.

    `f` must evaluate to a finite scalar Tensor at `at`.  Returns a ParamSet
    of plain tensors with the same shapes; parameters the expression does not
    touch get zero gradients.  Non-finite results re-run the expression with
    per-op checking to name the offending op.
    """
    params = at if all(t.requires_grad for _, t in at.items()) else at.copy(requires_grad=True)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        loss = f(params)
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValueError("grad() requires a scalar Tensor-valued expression")
    if not np.isfinite(loss.data).all():
        _identify_overflow(f, at)
        raise NumericalOverflowError("numerical overflow: expression value is non-finite")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        loss.backward()
    grads = ParamSet()
    bad = False
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            bad = True
        grads.add(name, g)
    if bad:
        _identify_overflow(f, at)
        raise NumericalOverflowError("numerical overflow: gradient is non-finite")
    return grads


def _identify_overflow(f, at: ParamSet) -> None:
    """Re-run with per-op finite checks so the error names the op."""
    params = at.copy(requires_grad=True)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"), finite_checks():
        loss = f(params)
        loss.backward()


@dataclass
class OptState:
    """AdamW optimizer state: bias-corrected first/second moments per parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamSet, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> "OptState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(params: ParamSet, grads: ParamSet, state: OptState,
              lr: float | None = None) -> tuple[ParamSet, OptState]:
    """One AdamW update (decoupled weight decay, bias-corrected moments).

    Functional: returns fresh parameters and a fresh state.  `lr` overrides
    the state's base learning rate (for schedules).
    """
    lr = state.lr if lr is None else float(lr)
    t = state.step + 1
    new = ParamSet()
    new_state = OptState(lr=state.lr, beta1=state.beta1, beta2=state.beta2,
                         eps=state.eps, weight_decay=state.weight_decay, step=t)
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name].data
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        data = p.data * (1.0 - lr * state.weight_decay) - lr * update
        new.add(name, data, requires_grad=True)
        new_state.m[name] = m
        new_state.v[name] = v
    return new, new_state


def ema_update(shadow: ParamSet, params: ParamSet, decay: float) -> ParamSet:
    """shadow <- decay * shadow + (1 - decay) * params, elementwise."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1], got {decay}")
    out = ParamSet()
    for name, s in shadow.items():
        p = params[name]
        if p.shape != s.shape:
            raise ValueError(f"EMA shape mismatch for {name!r}: {s.shape} vs {p.shape}")
        out.add(name, decay * s.data + (1.0 - decay) * p.data)
    return out
