"""Readout: quaternion-to-real conversion and the segmentation decoder.

The four planes collapse to one real map through per-channel soft
attention: each channel's four global-average values are softmaxed into
four weights that mix the planes. The decoder then climbs back to full
resolution, folding in a 1x1-projected low-level skip before each 3x3
refinement, upsampling x2 ahead of every merge, and finishing with a
2-channel head (index 0 background, 1 foreground) under a channel
softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Variable
from .errors import ShapeError, ValidationError
from .quat_layers import QuatTensor
from .tensor_ops import Conv2dParams


@dataclass(frozen=True)
class DecoderParams:
    """Per-skip 1x1 projections, one 3x3 refine per merge, and the 2-way head."""

    skip_projections: tuple
    refine_convs: tuple
    head: Conv2dParams

    def __post_init__(self) -> None:
        object.__setattr__(self, "skip_projections", tuple(self.skip_projections))
        object.__setattr__(self, "refine_convs", tuple(self.refine_convs))
        if len(self.skip_projections) != len(self.refine_convs):
            raise ValidationError(
                f"{len(self.skip_projections)} skip projections need as many "
                f"refine convs, got {len(self.refine_convs)}")
        if self.head.kernel.shape[0] != 2:
            raise ValidationError(
                f"head must emit 2 channels, got {self.head.kernel.shape[0]}")


def t_quat_to_real(tape, planes) -> Variable:
    """Weighted plane sum, weights = per-channel softmax of the planes' GAPs."""
    d = planes[0].shape[0]
    gaps = [ag.reshape(tape, ag.amean(tape, p, (1, 2)), (1, d)) for p in planes]
    w = ag.softmax(tape, ag.concat(tape, gaps, axis=0), axis=0)
    out = None
    for delta, p in enumerate(planes):
        wd = ag.reshape(tape, ag.getitem(tape, w, delta), (d, 1, 1))
        term = ag.mul(tape, wd, p)
        out = term if out is None else ag.add(tape, out, term)
    return out


def t_decode(tape, fr, skips, projections, refines, head):
    """Decoder forward. Returns (logits, soft), both [2,H,W] Variables.

    projections/refines: per-skip (kernel, bias) pairs; head likewise.
    Each merge: upsample x2, concat the projected skip, 3x3 refine, ReLU.
    """
    x = fr
    for i, (skip, proj, refine) in enumerate(zip(skips, projections, refines)):
        x = ag.upsample2x(tape, x)
        if tuple(skip.shape[1:]) != tuple(x.shape[1:]):
            raise ShapeError(f"merge stage {i}: skip extent {skip.shape[1:]} "
                             f"does not match working extent {x.shape[1:]}")
        p = ag.conv2d(tape, skip, proj[0], proj[1], (1, 1), (0, 0))
        x = ag.concat(tape, [x, p], axis=0)
        x = ag.relu(tape, ag.conv2d(tape, x, refine[0], refine[1], (1, 1), (1, 1)))
    logits = ag.conv2d(tape, x, head[0], head[1], (1, 1), (0, 0))
    return logits, ag.softmax(tape, logits, axis=0)


def quat_to_real(q: QuatTensor) -> np.ndarray:
    """Pure forward: QuatTensor -> [D,H,W]."""
    planes = tuple(Variable(p, requires_grad=False) for p in q.planes)
    return t_quat_to_real(None, planes).value


def attention_weights(q: QuatTensor) -> np.ndarray:
    """The [4,D] mixing weights quat_to_real uses (diagnostic view)."""
    from .tensor_ops import global_avg_pool, softmax
    gaps = np.stack([global_avg_pool(p) for p in q.planes], axis=0)
    return softmax(gaps, axis=0)


def decode(fr: np.ndarray, skips, params: DecoderParams) -> np.ndarray:
    """Pure forward: real map plus coarse-to-fine skips -> [2,H,W] soft mask."""
    fr = np.asarray(fr, dtype=np.float64)
    skip_vars = [Variable(np.asarray(s, dtype=np.float64), requires_grad=False)
                 for s in skips]
    projections = [(p.kernel, p.bias) for p in params.skip_projections]
    refines = [(r.kernel, r.bias) for r in params.refine_convs]
    _, soft = t_decode(None, Variable(fr, requires_grad=False), skip_vars,
                       projections, refines, (params.head.kernel, params.head.bias))
    return soft.value


def binarize(soft: np.ndarray) -> np.ndarray:
    """Argmax over the two channels; an exact tie is background (0)."""
    soft = np.asarray(soft, dtype=np.float64)
    if soft.ndim != 3 or soft.shape[0] != 2:
        raise ShapeError(f"expected [2,H,W], got shape {soft.shape}")
    return (soft[1] > soft[0]).astype(np.float64)
