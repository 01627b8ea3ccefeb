"""Reverse-mode differentiation over the ops the pipeline uses.

Every op takes a Tape as its first argument and works on Variables.
Passing tape=None runs the same forward math without recording, so the
model code is written once and serves both pure inference and training.

Gradients accumulate additively across fan-out; call zero_grads between
steps. A tape drives exactly one backward pass; reset() rearms it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backend, tensor_ops
from .errors import ContractError, ShapeError


class Variable:
    """A tensor with a gradient slot. grad materializes lazily as zeros."""

    __slots__ = ("value", "_grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = True):
        self.value = np.asarray(value, dtype=np.float64)
        self._grad = None
        self.requires_grad = requires_grad

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g) -> None:
        # augmented assignment (grad += x) stores the array back through here
        self._grad = g

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self._grad = None


class Tape:
    """Append-only record of backward closures in forward order."""

    def __init__(self):
        self._nodes: list = []
        self._used = False

    def record(self, fn) -> None:
        self._nodes.append(fn)

    def reset(self) -> None:
        self._nodes.clear()
        self._used = False


def backward(tape: Tape, loss: Variable) -> None:
    """Propagate d(loss)/d(leaf) into every recorded Variable's grad."""
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape._used:
        raise ContractError("tape already consumed by backward; reset() to reuse")
    tape._used = True
    loss.grad += 1.0
    for fn in reversed(tape._nodes):
        fn()


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def _as_var(x) -> Variable:
    if isinstance(x, Variable):
        return x
    return Variable(x, requires_grad=False)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g back down to shape, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(tape: Tape | None, value: np.ndarray, inputs, bwd) -> Variable:
    out = Variable(value, requires_grad=any(v.requires_grad for v in inputs))
    if tape is not None and out.requires_grad:
        tape.record(bwd(out))
    return out


# elementwise arithmetic, broadcasting like numpy


def add(tape, a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad, b.shape)
        return fn
    return _make(tape, a.value + b.value, (a, b), bwd)


def sub(tape, a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.shape)
            if b.requires_grad:
                b.grad -= _unbroadcast(out.grad, b.shape)
        return fn
    return _make(tape, a.value - b.value, (a, b), bwd)


def mul(tape, a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad * b.value, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad * a.value, b.shape)
        return fn
    return _make(tape, a.value * b.value, (a, b), bwd)


def div(tape, a, b) -> Variable:
    a, b = _as_var(a), _as_var(b)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad / b.value, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(-out.grad * a.value / (b.value * b.value), b.shape)
        return fn
    return _make(tape, a.value / b.value, (a, b), bwd)


def neg(tape, a) -> Variable:
    a = _as_var(a)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad -= out.grad
        return fn
    return _make(tape, -a.value, (a,), bwd)


def scale(tape, a, s: float) -> Variable:
    """Multiply by a non-learned python scalar."""
    a = _as_var(a)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad * s
        return fn
    return _make(tape, a.value * s, (a,), bwd)


def sqrt(tape, a) -> Variable:
    a = _as_var(a)
    val = np.sqrt(a.value)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad * 0.5 / out.value
        return fn
    return _make(tape, val, (a,), bwd)


def relu(tape, a) -> Variable:
    a = _as_var(a)
    def bwd(out):
        mask = a.value > 0
        def fn():
            if a.requires_grad:
                a.grad += out.grad * mask
        return fn
    return _make(tape, np.maximum(a.value, 0.0), (a,), bwd)


# reductions


def rsum(tape, a) -> Variable:
    """Sum of all elements, as a scalar Variable."""
    a = _as_var(a)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad
        return fn
    return _make(tape, np.asarray(a.value.sum()), (a,), bwd)


def rmean(tape, a) -> Variable:
    """Mean of all elements, as a scalar Variable."""
    a = _as_var(a)
    n = a.value.size
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad / n
        return fn
    return _make(tape, np.asarray(a.value.mean()), (a,), bwd)


def amean(tape, a, axis: tuple[int, ...]) -> Variable:
    """Mean over the given axes, keepdims, so the result broadcasts back."""
    a = _as_var(a)
    axis = tuple(axis)
    n = int(np.prod([a.shape[i] for i in axis]))
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += np.broadcast_to(out.grad / n, a.shape)
        return fn
    return _make(tape, a.value.mean(axis=axis, keepdims=True), (a,), bwd)


# shape plumbing


def reshape(tape, a, shape) -> Variable:
    a = _as_var(a)
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad.reshape(a.shape)
        return fn
    return _make(tape, a.value.reshape(shape), (a,), bwd)


def transpose(tape, a, axes) -> Variable:
    a = _as_var(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    def bwd(out):
        def fn():
            if a.requires_grad:
                a.grad += out.grad.transpose(inv)
        return fn
    return _make(tape, a.value.transpose(axes), (a,), bwd)


def _has_advanced_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def getitem(tape, a, idx) -> Variable:
    a = _as_var(a)
    advanced = _has_advanced_index(idx)
    def bwd(out):
        def fn():
            if a.requires_grad:
                if advanced:
                    np.add.at(a.grad, idx, out.grad)
                else:
                    a.grad[idx] += out.grad
        return fn
    return _make(tape, a.value[idx].copy(), (a,), bwd)


def concat(tape, parts, axis: int) -> Variable:
    parts = [_as_var(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    def bwd(out):
        def fn():
            offsets = np.cumsum([0] + sizes)
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    p.grad += out.grad[tuple(sl)]
        return fn
    return _make(tape, np.concatenate([p.value for p in parts], axis=axis), parts, bwd)


# neural ops


def conv2d(tape, x, w, b=None, stride=(1, 1), padding=(0, 0)) -> Variable:
    """Batched 2D cross-correlation. x [N,C,H,W] or [C,H,W] (treated as N=1)."""
    x, w = _as_var(x), _as_var(w)
    bv = _as_var(b) if b is not None else None
    xv = x.value
    batched = xv.ndim == 4
    if not batched and xv.ndim != 3:
        raise ShapeError(f"conv2d input must be rank 3 or 4, got shape {xv.shape}")
    x4 = xv if batched else xv[None]
    if x4.shape[1] != w.shape[1]:
        raise ShapeError(f"input channels {x4.shape} do not match kernel {w.shape}")
    sh, sw = stride
    ph, pw = padding
    y = backend.conv2d_fwd(x4, w.value, sh, sw, ph, pw)
    if bv is not None:
        y = y + bv.value[None, :, None, None]
    inputs = (x, w) if bv is None else (x, w, bv)
    def bwd(out):
        def fn():
            g = out.grad if batched else out.grad[None]
            if x.requires_grad:
                gx = backend.conv2d_bwd_input(g, w.value, sh, sw, ph, pw,
                                              x4.shape[2], x4.shape[3])
                x.grad += gx if batched else gx[0]
            if w.requires_grad:
                w.grad += backend.conv2d_bwd_weight(x4, g, sh, sw, ph, pw,
                                                    w.shape[2], w.shape[3])
            if bv is not None and bv.requires_grad:
                bv.grad += g.sum(axis=(0, 2, 3))
        return fn
    return _make(tape, y if batched else y[0], inputs, bwd)


def _scatter_axis(dst: np.ndarray, idx: np.ndarray, src: np.ndarray, axis: int) -> None:
    # dst[.., idx[k], ..] += src[.., k, ..]; duplicates in idx must accumulate
    np.add.at(np.moveaxis(dst, axis, 0), idx, np.moveaxis(src, axis, 0))


def upsample2x(tape, a) -> Variable:
    """Bilinear x2 on the two trailing axes of [C,H,W]."""
    a = _as_var(a)
    val = tensor_ops.upsample2x(a.value)
    def bwd(out):
        def fn():
            if not a.requires_grad:
                return
            c, h, w = a.shape
            i0, i1, wy = tensor_ops._lin_maps(h)
            j0, j1, wx = tensor_ops._lin_maps(w)
            g = out.grad
            rows_g = np.zeros((c, 2 * h, w))
            _scatter_axis(rows_g, j0, g * (1.0 - wx)[None, None, :], axis=2)
            _scatter_axis(rows_g, j1, g * wx[None, None, :], axis=2)
            gx = np.zeros((c, h, w))
            _scatter_axis(gx, i0, rows_g * (1.0 - wy)[None, :, None], axis=1)
            _scatter_axis(gx, i1, rows_g * wy[None, :, None], axis=1)
            a.grad += gx
        return fn
    return _make(tape, val, (a,), bwd)


def softmax(tape, a, axis: int) -> Variable:
    a = _as_var(a)
    val = tensor_ops.softmax(a.value, axis)
    def bwd(out):
        def fn():
            if a.requires_grad:
                s = out.value
                g = out.grad
                a.grad += s * (g - (g * s).sum(axis=axis, keepdims=True))
        return fn
    return _make(tape, val, (a,), bwd)


def log_softmax(tape, a, axis: int) -> Variable:
    a = _as_var(a)
    m = a.value.max(axis=axis, keepdims=True)
    shifted = a.value - m
    val = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    def bwd(out):
        def fn():
            if a.requires_grad:
                g = out.grad
                a.grad += g - np.exp(out.value) * g.sum(axis=axis, keepdims=True)
        return fn
    return _make(tape, val, (a,), bwd)


# verification and optimization


def finite_diff_check(f, x: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between taped gradients and central differences.

    f(tape, Variable) must return a scalar Variable and be deterministic.
    """
    x = np.array(x, dtype=np.float64)
    tape = Tape()
    leaf = Variable(x.copy())
    backward(tape, f(tape, leaf))
    analytic = leaf.grad.copy()

    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(None, Variable(x.copy(), requires_grad=False)).value)
        flat[i] = orig - h
        fm = float(f(None, Variable(x.copy(), requires_grad=False)).value)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * h)

    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(rel.max())


@dataclass
class AdamState:
    """First/second moment buffers, one pair per parameter, plus step count."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params], t=0)


def adam_step(params, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on each param's value."""
    if len(params) != len(state.m):
        raise ContractError(f"adam state holds {len(state.m)} moments "
                            f"for {len(params)} params")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
