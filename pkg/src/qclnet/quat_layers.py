"""Quaternion-valued correlation learning layers.

An aggregated correlation's 2x2 support slices become the four planes of
a quaternion tensor. Convolving that tensor with a quaternion-valued
kernel expands, plane by plane, into sixteen real convolutions whose
signs follow the Hamilton product with the weight on the left:

    out_r = qr*Wr - qx*Wx - qy*Wy - qz*Wz
    out_x = qr*Wx + qx*Wr - qy*Wz + qz*Wy
    out_y = qr*Wy + qx*Wz + qy*Wr - qz*Wx
    out_z = qr*Wz - qx*Wy + qy*Wx + qz*Wr

so one quaternion layer holds a quarter of the weights a real layer of
matched capacity would. Normalization uses a quaternion mean and one
shared real variance (the average of the four planes' variances).

Taped cores take/return 4-tuples of Variables; the public functions wrap
them with tape=None over the plain-array QuatTensor type.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import tensor_ops
from .autograd import Variable
from .errors import ConfigError, ShapeError, ValidationError


@dataclass(frozen=True)
class QuatTensor:
    """Four congruent real planes (r, x, y, z), each [C,H,W]."""

    r: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self) -> None:
        planes = []
        for name in ("r", "x", "y", "z"):
            p = np.asarray(getattr(self, name), dtype=np.float64)
            planes.append(p)
            object.__setattr__(self, name, p)
        base = planes[0].shape
        for name, p in zip(("x", "y", "z"), planes[1:]):
            if p.shape != base:
                raise ShapeError(f"plane {name} shape {p.shape} differs from r {base}")

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.r, self.x, self.y, self.z)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.r.shape


@dataclass(frozen=True)
class QuatConvParams:
    """Quaternion conv weights: four planes [out,in,kH,kW] and biases [out]."""

    wr: np.ndarray
    wx: np.ndarray
    wy: np.ndarray
    wz: np.ndarray
    br: np.ndarray
    bx: np.ndarray
    by: np.ndarray
    bz: np.ndarray

    def __post_init__(self) -> None:
        ws = []
        for name in ("wr", "wx", "wy", "wz"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            ws.append(w)
            object.__setattr__(self, name, w)
        if ws[0].ndim != 4:
            raise ShapeError(f"weights must be rank 4, got shape {ws[0].shape}")
        for name, w in zip(("wx", "wy", "wz"), ws[1:]):
            if w.shape != ws[0].shape:
                raise ShapeError(f"weight {name} shape {w.shape} differs from wr "
                                 f"{ws[0].shape}")
        out = ws[0].shape[0]
        for name in ("br", "bx", "by", "bz"):
            b = np.asarray(getattr(self, name), dtype=np.float64)
            if b.shape != (out,):
                raise ShapeError(f"bias {name} must be [{out}], got {b.shape}")
            object.__setattr__(self, name, b)

    @property
    def weights(self):
        return (self.wr, self.wx, self.wy, self.wz)

    @property
    def biases(self):
        return (self.br, self.bx, self.by, self.bz)


@dataclass(frozen=True)
class QuatNormParams:
    """Per-group scale gamma [G] and shifting quaternion beta [G,4]."""

    gamma: np.ndarray
    beta: np.ndarray
    groups: int = 4
    eps: float = tensor_ops.DEFAULT_EPS

    def __post_init__(self) -> None:
        g = np.asarray(self.gamma, dtype=np.float64)
        b = np.asarray(self.beta, dtype=np.float64)
        if g.ndim != 1 or g.shape[0] != self.groups:
            raise ShapeError(f"gamma must be [{self.groups}], got {g.shape}")
        if b.shape != (self.groups, 4):
            raise ShapeError(f"beta must be [{self.groups},4], got {b.shape}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "beta", b)


# taped cores


def t_encapsulate(tape, agg) -> tuple:
    """[Hq,Wq,2,2,D] -> four [D,Hq,Wq] planes, support slices in raster order:
    r <- (0,0), x <- (0,1), y <- (1,0), z <- (1,1)."""
    if len(agg.shape) != 5 or agg.shape[2] != 2 or agg.shape[3] != 2:
        raise ShapeError(f"expected [Hq,Wq,2,2,D], got shape {agg.shape}")
    planes = []
    for i, j in ((0, 0), (0, 1), (1, 0), (1, 1)):
        s = ag.getitem(tape, agg, (slice(None), slice(None), i, j, slice(None)))
        planes.append(ag.transpose(tape, s, (2, 0, 1)))
    return tuple(planes)


def t_quat_conv2d(tape, planes, weights, biases, stride, padding) -> tuple:
    """The sixteen-conv expansion above. biases may be None (bias-free)."""
    qr, qx, qy, qz = planes
    wr, wx, wy, wz = weights
    br, bx, by, bz = biases if biases is not None else (None,) * 4

    def cv(q, w, b=None):
        return ag.conv2d(tape, q, w, b, stride, padding)

    def combine(pos, negs):
        out = pos[0]
        for p in pos[1:]:
            out = ag.add(tape, out, p)
        for n in negs:
            out = ag.sub(tape, out, n)
        return out

    out_r = combine([cv(qr, wr, br)], [cv(qx, wx), cv(qy, wy), cv(qz, wz)])
    out_x = combine([cv(qr, wx, bx), cv(qx, wr), cv(qz, wy)], [cv(qy, wz)])
    out_y = combine([cv(qr, wy, by), cv(qx, wz), cv(qy, wr)], [cv(qz, wx)])
    out_z = combine([cv(qr, wz, bz), cv(qy, wx), cv(qz, wr)], [cv(qx, wy)])
    return (out_r, out_x, out_y, out_z)


def t_group_conv2d(tape, planes, weights, biases, stride, padding) -> tuple:
    """Plane-independent ablation: out_d = conv(q_d, W_d) + b_d, no cross terms."""
    bs = biases if biases is not None else (None,) * 4
    return tuple(ag.conv2d(tape, q, w, b, stride, padding)
                 for q, w, b in zip(planes, weights, bs))


def t_quat_norm(tape, planes, gamma, beta, groups: int, eps: float) -> tuple:
    """Per group: subtract the quaternion mean, divide by the shared real
    std, scale all planes by gamma, shift per plane by beta's components."""
    c = planes[0].shape[0]
    if c % groups != 0:
        raise ConfigError(f"channel count {c} not divisible by {groups} groups")
    grouped_shape = (groups, c // groups) + tuple(planes[0].shape[1:])
    axes = tuple(range(1, len(grouped_shape)))
    centered = []
    var = None
    for q in planes:
        g = ag.reshape(tape, q, grouped_shape)
        d = ag.sub(tape, g, ag.amean(tape, g, axes))
        centered.append(d)
        v = ag.amean(tape, ag.mul(tape, d, d), axes)
        var = v if var is None else ag.add(tape, var, v)
    var = ag.scale(tape, var, 0.25)
    den = ag.sqrt(tape, ag.add(tape, var, np.asarray(eps)))
    affine = (groups,) + (1,) * len(axes)
    gamma_b = ag.reshape(tape, gamma, affine)
    out = []
    for delta, d in enumerate(centered):
        n = ag.mul(tape, ag.div(tape, d, den), gamma_b)
        shift = ag.reshape(tape, ag.getitem(tape, beta, (slice(None), delta)), affine)
        out.append(ag.reshape(tape, ag.add(tape, n, shift), planes[0].shape))
    return tuple(out)


def t_qcl_block(tape, planes, weights, biases, gamma, beta, groups: int,
                eps: float, stride=(1, 1), padding=(1, 1)) -> tuple:
    """quat_conv2d -> quat_norm -> plane-wise ReLU."""
    planes = t_quat_conv2d(tape, planes, weights, biases, stride, padding)
    planes = t_quat_norm(tape, planes, gamma, beta, groups, eps)
    return tuple(ag.relu(tape, p) for p in planes)


def t_upsample_quat(tape, planes, crop_to=None) -> tuple:
    """Plane-wise bilinear x2; optionally crop trailing rows/cols to crop_to."""
    out = []
    for p in planes:
        u = ag.upsample2x(tape, p)
        if crop_to is not None and tuple(u.shape[1:]) != tuple(crop_to):
            h, w = crop_to
            if u.shape[1] < h or u.shape[2] < w or u.shape[1] > h + 1 \
                    or u.shape[2] > w + 1:
                raise ShapeError(f"upsampled extent {u.shape[1:]} cannot be "
                                 f"cropped to {crop_to}")
            u = ag.getitem(tape, u, (slice(None), slice(0, h), slice(0, w)))
        out.append(u)
    return tuple(out)


def t_quat_aggregation(tape, deep, fine, weights, biases, gamma, beta,
                       groups: int, eps: float) -> tuple:
    """Coarse-to-fine merge: upsample deep, add fine, run a qcl block."""
    crop = tuple(fine[0].shape[1:])
    up = t_upsample_quat(tape, deep, crop_to=crop)
    merged = tuple(ag.add(tape, u, f) for u, f in zip(up, fine))
    return t_qcl_block(tape, merged, weights, biases, gamma, beta, groups, eps)


# pure public API


def _vars(q: QuatTensor) -> tuple:
    return tuple(Variable(p, requires_grad=False) for p in q.planes)


def _quat(planes) -> QuatTensor:
    return QuatTensor(*(p.value for p in planes))


def encapsulate(agg: np.ndarray) -> QuatTensor:
    """Relabel the 2x2 support slices of [Hq,Wq,2,2,D] as quaternion planes."""
    agg = np.asarray(agg, dtype=np.float64)
    return _quat(t_encapsulate(None, Variable(agg, requires_grad=False)))


def de_encapsulate(q: QuatTensor) -> np.ndarray:
    """Inverse relabeling: four [D,Hq,Wq] planes back to [Hq,Wq,2,2,D]."""
    d, hq, wq = q.shape
    out = np.empty((hq, wq, 2, 2, d))
    for (i, j), p in zip(((0, 0), (0, 1), (1, 0), (1, 1)), q.planes):
        out[:, :, i, j, :] = p.transpose(1, 2, 0)
    return out


def _check_channels(q: QuatTensor, params: QuatConvParams) -> None:
    if q.shape[0] != params.wr.shape[1]:
        raise ShapeError(f"input channels {q.shape} do not match "
                         f"weights {params.wr.shape}")


def quat_conv2d(q: QuatTensor, params: QuatConvParams,
                stride=(1, 1), padding=(0, 0)) -> QuatTensor:
    _check_channels(q, params)
    return _quat(t_quat_conv2d(None, _vars(q), params.weights, params.biases,
                               stride, padding))


def group_conv2d_ablation(q: QuatTensor, params: QuatConvParams,
                          stride=(1, 1), padding=(0, 0)) -> QuatTensor:
    _check_channels(q, params)
    return _quat(t_group_conv2d(None, _vars(q), params.weights, params.biases,
                                stride, padding))


def quat_norm(q: QuatTensor, params: QuatNormParams) -> QuatTensor:
    return _quat(t_quat_norm(None, _vars(q), params.gamma, params.beta,
                             params.groups, params.eps))


def qcl_block(q: QuatTensor, conv: QuatConvParams, norm: QuatNormParams,
              stride=(1, 1), padding=None) -> QuatTensor:
    _check_channels(q, conv)
    if padding is None:
        padding = (conv.wr.shape[2] // 2, conv.wr.shape[3] // 2)
    return _quat(t_qcl_block(None, _vars(q), conv.weights, conv.biases,
                             norm.gamma, norm.beta, norm.groups, norm.eps,
                             stride, padding))


def quat_aggregation(deep: QuatTensor, fine: QuatTensor,
                     conv: QuatConvParams, norm: QuatNormParams) -> QuatTensor:
    return _quat(t_quat_aggregation(None, _vars(deep), _vars(fine),
                                    conv.weights, conv.biases,
                                    norm.gamma, norm.beta,
                                    norm.groups, norm.eps))


def augmented_covariance(sample: np.ndarray) -> np.ndarray:
    """Empirical 4x4 covariance of quaternion component vectors [N,4]."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 2 or sample.shape[1] != 4:
        raise ShapeError(f"sample must be [N,4], got shape {sample.shape}")
    if sample.shape[0] < 2:
        raise ValidationError(f"need at least 2 samples, got {sample.shape[0]}")
    return np.cov(sample, rowvar=False)


# parameter accounting


def quat_weight_count(params: QuatConvParams) -> int:
    """Weight scalars across the four planes (biases excluded)."""
    return 4 * int(np.prod(params.wr.shape))


def real_replacement_weight_count(params: QuatConvParams) -> int:
    """Weight scalars of a real conv with the same real channel capacity:
    4*out by 4*in channels at the same kernel extent, i.e. four times more."""
    return 16 * int(np.prod(params.wr.shape))


def group_weight_count(params: QuatConvParams) -> int:
    """The plane-independent ablation carries the same four weight planes."""
    return 4 * int(np.prod(params.wr.shape))
