"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-based engine: each op builds a `Tensor` node holding the result
and a vector-Jacobian-product closure.  `Tensor.backward()` walks the graph
in reverse topological order and accumulates gradients into `.grad`.

Supported primitives are deliberately limited to what the model zoo needs:
dense affine, 2D convolution (stride 1, same/valid), 2x2 pooling and nearest
upsampling, silu/tanh/relu, softmax, layer normalization, sum/mean
reductions, and elementwise arithmetic with numpy-style broadcasting.

Tensors are immutable values: `.data` is marked read-only after creation.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "NumericalOverflowError",
    "no_grad",
    "finite_checks",
    "set_default_dtype",
    "get_default_dtype",
    "concat",
    "matmul",
    "conv2d",
    "avg_pool2",
    "max_pool2",
    "upsample2",
    "conv2d_nhwc",
    "avg_pool2_nhwc",
    "upsample2_nhwc",
    "layer_norm",
    "softmax",
    "log_softmax",
    "relu",
    "silu",
    "tanh",
    "exp",
    "log",
    "sqrt",
]


class NumericalOverflowError(ArithmeticError):
    """An operation produced non-finite values."""


_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_CHECK_FINITE = False


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}, expected float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return np.dtype(_DEFAULT_DTYPE)


@contextlib.contextmanager
def no_grad():
    """Disable tape construction (inference / sampling fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def finite_checks(enabled: bool = True):
    """Check every op result for non-finite values (slow; used to pin down
    the op behind a numerical overflow)."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = prev


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype.kind != "f":
        arr = arr.astype(dtype or _DEFAULT_DTYPE)
    elif dtype is not None and arr.dtype != np.dtype(dtype):
        arr = arr.astype(dtype)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Immutable array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    # keep numpy from absorbing Tensors into object arrays; mixed
    # ndarray/Tensor arithmetic falls through to the reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple = (), vjp: Callable | None = None):
        arr = _as_array(data)
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.op = op
        self._parents = parents if self.requires_grad else ()
        self._vjp = vjp if self.requires_grad else None

    # ---- basic introspection ----
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # ---- graph execution ----
    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            parent_grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if _CHECK_FINITE and not np.isfinite(g).all():
                    raise NumericalOverflowError(
                        f"numerical overflow in backward of op '{node.op}'")
                if parent.grad is None:
                    parent.grad = g if (g.flags.owndata and g.flags.writeable) else g.copy()
                else:
                    parent.grad = parent.grad + g

    # ---- operator sugar ----
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if _CHECK_FINITE and not np.isfinite(data).all():
        raise NumericalOverflowError(f"numerical overflow in op '{op}'")
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, op=op, parents=tuple(parents), vjp=vjp)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(out, "mul", (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, "div", (a, b), vjp)


def power(a, exponent: float) -> Tensor:
    a = _lift(a)
    p = float(exponent)
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, "pow", (a,), vjp)


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, "exp", (a,), vjp)


def log(a) -> Tensor:
    a = _lift(a)
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _make(out, "log", (a,), vjp)


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return _make(out, "sqrt", (a,), vjp)


def absolute(a) -> Tensor:
    a = _lift(a)
    out = np.abs(a.data)

    def vjp(g):
        return (g * np.sign(a.data),)

    return _make(out, "abs", (a,), vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape),)

    return _make(np.asarray(out), "sum", (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape),)

    return _make(np.asarray(out), "mean", (a,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _make(out, "relu", (a,), vjp)


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, "tanh", (a,), vjp)


def silu(a) -> Tensor:
    a = _lift(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def vjp(g):
        return (g * sig * (1.0 + a.data * (1.0 - sig)),)

    return _make(out, "silu", (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, "softmax", (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make(out, "log_softmax", (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra / shaping
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, "matmul", (a, b), vjp)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make(out, "reshape", (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = _lift(a)
    out = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _make(out, "transpose", (a,), vjp)


def take(a, index) -> Tensor:
    a = _lift(a)
    out = a.data[index]

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.ascontiguousarray(out), "take", (a,), vjp)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [_lift(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _make(out, "concat", tuple(parts), vjp)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply learned gain and bias."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    out = normed * gain.data + bias.data
    n = a.shape[-1]

    def vjp(g):
        g_normed = g * gain.data
        g_var = (g_normed * centered).sum(axis=-1, keepdims=True) * (-0.5) * inv ** 3
        g_mu = (-g_normed * inv).sum(axis=-1, keepdims=True) + g_var * (-2.0 / n) * centered.sum(axis=-1, keepdims=True)
        ga = g_normed * inv + g_var * 2.0 / n * centered + g_mu / n
        ggain = _unbroadcast(g * normed, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return ga, ggain, gbias

    return _make(out, "layer_norm", (a, gain, bias), vjp)


# ---------------------------------------------------------------------------
# convolution / pooling (NCHW, stride 1)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B,C,H,W) -> (B*Ho*Wo, C*kh*kw) patch matrix for stride-1 windows."""
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))  # B,C,Ho,Wo,kh,kw
    b, c, ho, wo = windows.shape[:4]
    patches = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    return np.ascontiguousarray(patches), (b, ho, wo)


def _corr2d(x: np.ndarray, w: np.ndarray, pad: tuple[int, int]) -> np.ndarray:
    """Cross-correlation of (B,C,H,W) with (O,C,kh,kw); returns (B,O,Ho,Wo)."""
    kh, kw = w.shape[2], w.shape[3]
    if pad != (0, 0):
        x = np.pad(x, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])))
    patches, (b, ho, wo) = _im2col(x, kh, kw)
    out = patches @ w.reshape(w.shape[0], -1).T
    return out.reshape(b, ho, wo, w.shape[0]).transpose(0, 3, 1, 2), patches, (ho, wo)


def conv2d(x, w, b=None, padding: str = "same") -> Tensor:
    """2-D convolution, stride 1.  x: (B,C,H,W), w: (O,C,kh,kw), b: (O,)."""
    x, w = _lift(x), _lift(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    kh, kw = w.shape[2], w.shape[3]
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("'same' padding requires odd kernel size")
        pad = (kh // 2, kw // 2)
    elif padding == "valid":
        pad = (0, 0)
    else:
        raise ValueError(f"unknown padding {padding!r}")

    out, patches, (ho, wo) = _corr2d(x.data, w.data, pad)
    parents = [x, w]
    if b is not None:
        b = _lift(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"conv2d bias shape {b.shape} != ({w.shape[0]},)")
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def vjp(g):
        go_mat = g.transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
        gw = (patches.T @ go_mat).T.reshape(w.shape)
        # grad wrt input: full correlation with the spatially flipped kernel
        w_flip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx_full, _, _ = _corr2d(g, np.ascontiguousarray(w_flip), (kh - 1 - pad[0], kw - 1 - pad[1]))
        grads = [gx_full, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, "conv2d", tuple(parents), vjp)


def avg_pool2(x) -> Tensor:
    """2x2 average pooling, stride 2."""
    x = _lift(x)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial dims, got {(h, w)}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2)
    out = blocks.mean(axis=(3, 5))

    def vjp(g):
        g4 = (g / 4.0)[:, :, :, None, :, None]
        return (np.broadcast_to(g4, (b, c, h // 2, 2, w // 2, 2)).reshape(b, c, h, w),)

    return _make(out, "avg_pool2", (x,), vjp)


def max_pool2(x) -> Tensor:
    """2x2 max pooling, stride 2 (gradient routed to the argmax)."""
    x = _lift(x)
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2 needs even spatial dims, got {(h, w)}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(b, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = gflat.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gx.reshape(b, c, h, w),)

    return _make(out, "max_pool2", (x,), vjp)


def upsample2(x) -> Tensor:
    """Nearest-neighbour 2x upsampling (adjoint of 2x2 sum pooling)."""
    x = _lift(x)
    b, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def vjp(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, "upsample2", (x,), vjp)


# ---------------------------------------------------------------------------
# channels-last (NHWC) convolution / pooling
#
# Same primitives as above in the layout the conv models use internally:
# small 3x3 kernels run as kh*kw shifted GEMMs, which avoids the expensive
# im2col gather on cache-starved single-core machines.
# ---------------------------------------------------------------------------

def _nhwc_corr(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: x (B,H,W,C) with w (kh,kw,C,O) -> (B,Ho,Wo,O)."""
    b, h, wd, c = x.shape
    kh, kw, _, o = w.shape
    ho, wo = h - kh + 1, wd - kw + 1
    acc = np.zeros((b * ho * wo, o), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            xs = x[:, di:di + ho, dj:dj + wo, :].reshape(-1, c)
            acc += xs @ w[di, dj]
    return acc.reshape(b, ho, wo, o)


def conv2d_nhwc(x, w, b=None, padding: str = "same") -> Tensor:
    """2-D convolution, stride 1, channels last.  x: (B,H,W,C), w: (kh,kw,C,O)."""
    x, w = _lift(x), _lift(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d_nhwc expects 4-D input and weight, got {x.shape}, {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ValueError(f"conv2d_nhwc channel mismatch: input {x.shape[3]}, weight {w.shape[2]}")
    kh, kw = w.shape[0], w.shape[1]
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("'same' padding requires odd kernel size")
        pad = (kh // 2, kw // 2)
    elif padding == "valid":
        pad = (0, 0)
    else:
        raise ValueError(f"unknown padding {padding!r}")

    xp = np.pad(x.data, ((0, 0), (pad[0], pad[0]), (pad[1], pad[1]), (0, 0))) if pad != (0, 0) else x.data
    out = _nhwc_corr(xp, w.data)
    parents = [x, w]
    if b is not None:
        b = _lift(b)
        if b.shape != (w.shape[3],):
            raise ValueError(f"conv2d_nhwc bias shape {b.shape} != ({w.shape[3]},)")
        out = out + b.data
        parents.append(b)

    def vjp(g):
        bsz, ho, wo, o = g.shape
        c = x.shape[3]
        go_mat = g.reshape(-1, o)
        gw = np.empty_like(w.data)
        for di in range(kh):
            for dj in range(kw):
                xs = xp[:, di:di + ho, dj:dj + wo, :].reshape(-1, c)
                gw[di, dj] = xs.T @ go_mat
        # gradient wrt the padded input: full correlation with the flipped,
        # transposed kernel; then crop the padding margins
        w_flip = w.data[::-1, ::-1].transpose(0, 1, 3, 2)
        gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
        gxp = _nhwc_corr(gp, np.ascontiguousarray(w_flip))
        if pad != (0, 0):
            gx = gxp[:, pad[0]:pad[0] + x.shape[1], pad[1]:pad[1] + x.shape[2], :]
        else:
            gx = gxp
        grads = [np.ascontiguousarray(gx), gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return tuple(grads)

    return _make(out, "conv2d_nhwc", tuple(parents), vjp)


def avg_pool2_nhwc(x) -> Tensor:
    """2x2 average pooling, stride 2, channels last."""
    x = _lift(x)
    b, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2_nhwc needs even spatial dims, got {(h, w)}")
    out = x.data.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def vjp(g):
        g4 = (g / 4.0)[:, :, None, :, None, :]
        return (np.broadcast_to(g4, (b, h // 2, 2, w // 2, 2, c)).reshape(b, h, w, c),)

    return _make(out, "avg_pool2_nhwc", (x,), vjp)


def upsample2_nhwc(x) -> Tensor:
    """Nearest-neighbour 2x upsampling, channels last."""
    x = _lift(x)
    b, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def vjp(g):
        return (g.reshape(b, h, 2, w, 2, c).sum(axis=(2, 4)),)

    return _make(out, "upsample2_nhwc", (x,), vjp)
