"""Correlation aggregation: squeeze each 4D volume's support subspace to 2x2.

A 4D convolution over [Hq,Wq,Hs,Ws] factors into a 2D convolution over
query coordinates (support pixel fixed) followed by a 2D convolution
over support coordinates. Each aggregation layer is that separable pair,
then group normalization, then ReLU. Support-side stride 2 halves the
support extent per layer until it reaches exactly 2; the query extent is
never reduced.

Ops are written once over the autograd tape; passing tape=None gives the
pure forward the public functions expose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import tensor_ops
from .autograd import Variable
from .errors import ConfigError, ShapeError, ValidationError


@dataclass(frozen=True)
class SeparableKernel4d:
    """Factorized 4D kernel: k_query [out,in,kq,kq], k_support [out,out,ks,ks].

    pad_q / pad_s of None mean centered same-padding (k//2).
    """

    k_query: np.ndarray
    k_support: np.ndarray
    stride_q: int = 1
    stride_s: int = 1
    pad_q: int | None = None
    pad_s: int | None = None

    def __post_init__(self) -> None:
        kq = np.asarray(self.k_query, dtype=np.float64)
        ks = np.asarray(self.k_support, dtype=np.float64)
        if kq.ndim != 4 or ks.ndim != 4:
            raise ShapeError(f"kernels must be rank 4, got {kq.shape} and {ks.shape}")
        if kq.shape[2] != kq.shape[3] or kq.shape[2] % 2 == 0:
            raise ValidationError(f"query kernel must be square and odd, got {kq.shape}")
        if ks.shape[2] != ks.shape[3] or ks.shape[2] % 2 == 0:
            raise ValidationError(f"support kernel must be square and odd, got {ks.shape}")
        if ks.shape[1] != kq.shape[0] or ks.shape[0] != kq.shape[0]:
            raise ShapeError(f"support kernel channels {ks.shape} must both equal "
                             f"the query kernel's out count {kq.shape[0]}")
        if self.stride_q < 1 or self.stride_s < 1:
            raise ValidationError(f"strides must be >= 1, got "
                                  f"({self.stride_q}, {self.stride_s})")
        object.__setattr__(self, "k_query", kq)
        object.__setattr__(self, "k_support", ks)

    def pads(self) -> tuple[int, int]:
        pq = self.k_query.shape[2] // 2 if self.pad_q is None else self.pad_q
        ps = self.k_support.shape[2] // 2 if self.pad_s is None else self.pad_s
        return pq, ps


@dataclass(frozen=True)
class AggLayerParams:
    """One aggregation layer: separable kernel plus its group-norm affine."""

    kernel: SeparableKernel4d
    gn_gamma: np.ndarray
    gn_beta: np.ndarray
    groups: int = 4
    eps: float = tensor_ops.DEFAULT_EPS

    def __post_init__(self) -> None:
        out = self.kernel.k_support.shape[0]
        g = np.asarray(self.gn_gamma, dtype=np.float64)
        b = np.asarray(self.gn_beta, dtype=np.float64)
        if g.shape != (out,) or b.shape != (out,):
            raise ShapeError(f"gn affine must be [{out}], got {g.shape} and {b.shape}")
        object.__setattr__(self, "gn_gamma", g)
        object.__setattr__(self, "gn_beta", b)


def t_separable_conv4d(tape, t, k_query, k_support,
                       stride_q: int, stride_s: int,
                       pad_q: int, pad_s: int) -> Variable:
    """Taped separable 4D convolution on t [C,Hq,Wq,Hs,Ws].

    Inner pass: fold support coordinates into the batch axis and run the
    query-subspace conv2d. Outer pass: fold (reduced) query coordinates
    into the batch axis and run the support-subspace conv2d.
    """
    c, hq, wq, hs, ws = t.shape
    v = ag.transpose(tape, t, (3, 4, 0, 1, 2))
    v = ag.reshape(tape, v, (hs * ws, c, hq, wq))
    v = ag.conv2d(tape, v, k_query, None, (stride_q, stride_q), (pad_q, pad_q))
    mid, hq2, wq2 = v.shape[1], v.shape[2], v.shape[3]
    v = ag.reshape(tape, v, (hs, ws, mid, hq2, wq2))
    v = ag.transpose(tape, v, (3, 4, 2, 0, 1))
    v = ag.reshape(tape, v, (hq2 * wq2, mid, hs, ws))
    v = ag.conv2d(tape, v, k_support, None, (stride_s, stride_s), (pad_s, pad_s))
    out, hs2, ws2 = v.shape[1], v.shape[2], v.shape[3]
    v = ag.reshape(tape, v, (hq2, wq2, out, hs2, ws2))
    return ag.transpose(tape, v, (2, 0, 1, 3, 4))


def separable_conv4d(c: np.ndarray, k: SeparableKernel4d) -> np.ndarray:
    """Pure forward of the factorized 4D convolution."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 5:
        raise ShapeError(f"input must be [C,Hq,Wq,Hs,Ws], got shape {c.shape}")
    if c.shape[0] != k.k_query.shape[1]:
        raise ShapeError(f"input channels {c.shape} do not match "
                         f"query kernel {k.k_query.shape}")
    pq, ps = k.pads()
    v = Variable(c, requires_grad=False)
    return t_separable_conv4d(None, v, k.k_query, k.k_support,
                              k.stride_q, k.stride_s, pq, ps).value


def outer_product_kernel(k: SeparableKernel4d) -> np.ndarray:
    """Materialize the full 4D kernel [out,in,kq,kq,ks,ks] the pair factors."""
    # K[o,c,a,b,e,f] = sum_m k_query[m,c,a,b] * k_support[o,m,e,f]
    return np.einsum("mcab,omef->ocabef", k.k_query, k.k_support)


def t_group_norm(tape, v, groups: int, gamma, beta, eps: float) -> Variable:
    """Taped group normalization over [C, *any spatial axes]."""
    c = v.shape[0]
    if c % groups != 0:
        raise ConfigError(f"channel count {c} not divisible by {groups} groups")
    g = ag.reshape(tape, v, (groups, c // groups) + v.shape[1:])
    axes = tuple(range(1, len(g.shape)))
    mu = ag.amean(tape, g, axes)
    d = ag.sub(tape, g, mu)
    var = ag.amean(tape, ag.mul(tape, d, d), axes)
    den = ag.sqrt(tape, ag.add(tape, var, np.asarray(eps)))
    n = ag.reshape(tape, ag.div(tape, d, den), v.shape)
    affine = (c,) + (1,) * (len(v.shape) - 1)
    out = ag.mul(tape, n, ag.reshape(tape, gamma, affine))
    return ag.add(tape, out, ag.reshape(tape, beta, affine))


def t_agg_layer(tape, v, k_query, k_support, stride_s: int,
                gamma, beta, groups: int, eps: float) -> Variable:
    """separable_conv4d -> group_norm -> relu, query side always stride 1."""
    kq = k_query.shape if hasattr(k_query, "shape") else np.shape(k_query)
    ks = k_support.shape if hasattr(k_support, "shape") else np.shape(k_support)
    v = t_separable_conv4d(tape, v, k_query, k_support,
                           1, stride_s, kq[2] // 2, ks[2] // 2)
    v = t_group_norm(tape, v, groups, gamma, beta, eps)
    return ag.relu(tape, v)


def plan_support_strides(extent: int) -> list[int]:
    """Support strides per layer: the stride-1 entry, then 2s until extent 2.

    With 3x3 kernels and padding 1, stride 2 maps extent e to ceil(e/2),
    so any starting extent >= 2 lands exactly on 2.
    """
    if extent < 2:
        raise ConfigError(f"support extent {extent} cannot be reduced to 2x2")
    strides = [1]
    while extent > 2:
        strides.append(2)
        extent = (extent + 1) // 2
    return strides


def t_aggregate(tape, v, layers) -> Variable:
    """Run the layer stack and emit [Hq,Wq,2,2,D].

    layers: sequence of (k_query, k_support, stride_s, gamma, beta, groups, eps)
    tuples whose tensors may be Variables (training) or arrays (inference).
    """
    for kq, ks, ss, gamma, beta, groups, eps in layers:
        v = t_agg_layer(tape, v, kq, ks, ss, gamma, beta, groups, eps)
    if v.shape[3] != 2 or v.shape[4] != 2:
        raise ShapeError(f"aggregation ended at support extent "
                         f"{v.shape[3]}x{v.shape[4]}, expected 2x2")
    return ag.transpose(tape, v, (1, 2, 3, 4, 0))


def aggregate(c: np.ndarray, layers, target_d: int) -> np.ndarray:
    """Pure aggregation of one correlation volume to [Hq,Wq,2,2,target_d]."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 5:
        raise ShapeError(f"input must be [C,Hq,Wq,Hs,Ws], got shape {c.shape}")
    packed = [(lp.kernel.k_query, lp.kernel.k_support, lp.kernel.stride_s,
               lp.gn_gamma, lp.gn_beta, lp.groups, lp.eps) for lp in layers]
    out = t_aggregate(None, Variable(c, requires_grad=False), packed).value
    if out.shape[4] != target_d:
        raise ShapeError(f"aggregation produced {out.shape[4]} channels, "
                         f"expected {target_d}")
    return out


def topk_aggregate(c: np.ndarray, k: int) -> np.ndarray:
    """Per query pixel and channel, the k largest support values, descending.

    Ties keep the smaller flattened support index first. Output is
    [Hq,Wq,k*C] with channel-major blocks: channel i occupies columns
    i*k..(i+1)*k.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 5:
        raise ShapeError(f"input must be [C,Hq,Wq,Hs,Ws], got shape {c.shape}")
    n_support = c.shape[3] * c.shape[4]
    if not 1 <= k <= n_support:
        raise ValidationError(f"k must be in [1, {n_support}], got {k}")
    flat = c.reshape(c.shape[0], c.shape[1], c.shape[2], n_support)
    order = np.argsort(-flat, axis=-1, kind="stable")[..., :k]
    top = np.take_along_axis(flat, order, axis=-1)
    return top.transpose(1, 2, 0, 3).reshape(c.shape[1], c.shape[2], c.shape[0] * k)
