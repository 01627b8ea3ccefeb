"""Real-valued tensor primitives.

Dense float64 numpy arrays, row-major, are the tensor type throughout.
These are forward-only functions; the differentiable versions in
`autograd` call back into the same math so there is one definition of
each computation.

Convolution here means cross-correlation (no kernel flip).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigError, ShapeError, ValidationError

DEFAULT_EPS = 1e-5


def _arr(t) -> np.ndarray:
    return np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class Conv2dParams:
    """Weights of one 2D convolution layer.

    kernel [out_ch, in_ch, kH, kW], bias [out_ch]. Kernel extents must be
    odd so that same-padding is symmetric; strides must be >= 1.
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        k = _arr(self.kernel)
        b = _arr(self.bias)
        if k.ndim != 4:
            raise ShapeError(f"conv2d kernel must be rank 4, got shape {k.shape}")
        if b.shape != (k.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match out_ch {k.shape[0]}")
        if k.shape[2] % 2 == 0 or k.shape[3] % 2 == 0:
            raise ValidationError(f"kernel extents must be odd, got {k.shape[2]}x{k.shape[3]}")
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise ValidationError(f"stride components must be >= 1, got {self.stride}")
        if self.padding[0] < 0 or self.padding[1] < 0:
            raise ValidationError(f"padding components must be >= 0, got {self.padding}")
        if not (np.isfinite(k).all() and np.isfinite(b).all()):
            raise ValidationError("conv2d parameters contain non-finite values")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", b)


def conv2d(x: np.ndarray, params: Conv2dParams) -> np.ndarray:
    """Strided 2D cross-correlation plus bias: [C,H,W] -> [out_ch,H',W']."""
    x = _arr(x)
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be rank 3 [C,H,W], got shape {x.shape}")
    if x.shape[0] != params.kernel.shape[1]:
        raise ShapeError(
            f"input channels {x.shape} do not match kernel {params.kernel.shape}")
    y = backend.conv2d_fwd(x[None], params.kernel,
                           params.stride[0], params.stride[1],
                           params.padding[0], params.padding[1])[0]
    return y + params.bias[:, None, None]


def conv4d(x: np.ndarray, kernel: np.ndarray,
           stride_q: int = 1, stride_s: int = 1,
           pad_q: int = 0, pad_s: int = 0) -> np.ndarray:
    """Full (unfactored) 4D cross-correlation over both 2D subspaces.

    x [C,Hq,Wq,Hs,Ws], kernel [out,C,kq,kq,ks,ks]. Reference operation
    for the separable aggregation path; small shapes only.
    """
    x = _arr(x)
    kernel = _arr(kernel)
    if x.ndim != 5 or kernel.ndim != 6:
        raise ShapeError(f"conv4d expects rank-5 input and rank-6 kernel, "
                         f"got {x.shape} and {kernel.shape}")
    if x.shape[0] != kernel.shape[1]:
        raise ShapeError(f"input channels {x.shape} do not match kernel {kernel.shape}")
    for e in kernel.shape[2:]:
        if e % 2 == 0:
            raise ValidationError(f"conv4d kernel extents must be odd, got {kernel.shape}")
    return backend.conv4d_fwd(x, kernel, stride_q, stride_s, pad_q, pad_s)


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(_arr(t), 0.0)


def softmax(v: np.ndarray, axis: int) -> np.ndarray:
    """Exponentials normalized along axis, stabilized by max subtraction."""
    v = _arr(v)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def global_avg_pool(t: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean: [C,H,W] -> [C]."""
    t = _arr(t)
    if t.ndim != 3:
        raise ShapeError(f"global_avg_pool expects [C,H,W], got shape {t.shape}")
    return t.mean(axis=(1, 2))


def _lin_maps(n_src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel bilinear gather maps for doubling one axis.

    Returns (i0, i1, w): out[o] = (1-w[o])*src[i0[o]] + w[o]*src[i1[o]].
    """
    src = (np.arange(2 * n_src, dtype=np.float64) + 0.5) / 2.0 - 0.5
    f = np.floor(src)
    w = src - f
    i0 = np.clip(f, 0, n_src - 1).astype(np.int64)
    i1 = np.clip(f + 1, 0, n_src - 1).astype(np.int64)
    return i0, i1, w


def upsample2x(t: np.ndarray) -> np.ndarray:
    """Bilinear x2 upsampling with half-pixel centers: [C,H,W] -> [C,2H,2W]."""
    t = _arr(t)
    if t.ndim != 3:
        raise ShapeError(f"upsample2x expects [C,H,W], got shape {t.shape}")
    i0, i1, wy = _lin_maps(t.shape[1])
    j0, j1, wx = _lin_maps(t.shape[2])
    rows = t[:, i0, :] * (1.0 - wy)[None, :, None] + t[:, i1, :] * wy[None, :, None]
    return rows[:, :, j0] * (1.0 - wx)[None, None, :] + rows[:, :, j1] * wx[None, None, :]


def group_norm(t: np.ndarray, groups: int, gamma: np.ndarray, beta: np.ndarray,
               eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-group zero-mean unit-variance normalization with affine output.

    t [C,*spatial]; statistics pool over the group's channels and all
    spatial positions, biased variance. gamma/beta are per channel [C].
    """
    t = _arr(t)
    gamma = _arr(gamma)
    beta = _arr(beta)
    c = t.shape[0]
    if c % groups != 0:
        raise ConfigError(f"channel count {c} not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must be [{c}], got {gamma.shape} and {beta.shape}")
    g = t.reshape(groups, c // groups, *t.shape[1:])
    axes = tuple(range(1, g.ndim))
    mu = g.mean(axis=axes, keepdims=True)
    var = g.var(axis=axes, keepdims=True)
    out = ((g - mu) / np.sqrt(var + eps)).reshape(t.shape)
    shape = (c,) + (1,) * (t.ndim - 1)
    return out * gamma.reshape(shape) + beta.reshape(shape)
