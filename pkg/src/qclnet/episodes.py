"""Episodes: data model, synthetic generator, k-shot fusion, and metrics.

A synthetic episode plants a shared low-rank "object signature" into the
masked regions of the support and query features, so segmenting the
query object is learnable from correlations alone. Masks are random
rectangles covering roughly 10-50% of the frame.

Fusion follows the prior-attention rule: per-shot prediction maps are
mixed by a per-pixel softmax over each shot's prior map (the max
support-pixel similarity), then thresholded strictly above tau.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import model as model_mod
from . import tensor_ops
from .config import Config
from .correlation import (FeaturePyramid, PyramidSpec, _resize_nearest,
                          build_hypercorrelation, cosine_correlation,
                          mask_support, synthetic_pyramid)
from .errors import ShapeError, ValidationError
from .model import ModelParams


@dataclass
class Episode:
    """K support (pyramid, mask) pairs plus the query side and its truth."""

    support_pyramids: list
    support_masks: list
    query_pyramid: FeaturePyramid
    query_skips: list
    query_mask: np.ndarray
    class_id: int

    def __post_init__(self) -> None:
        if len(self.support_pyramids) < 1:
            raise ValidationError("episode needs at least one support shot")
        if len(self.support_pyramids) != len(self.support_masks):
            raise ValidationError(f"{len(self.support_pyramids)} support pyramids "
                                  f"but {len(self.support_masks)} masks")
        for m in list(self.support_masks) + [self.query_mask]:
            if not np.isin(m, (0.0, 1.0)).all():
                raise ValidationError("episode masks must be binary")

    @property
    def k(self) -> int:
        return len(self.support_pyramids)


def _rect_mask(rng, extent: int) -> np.ndarray:
    # side fractions in [0.32, 0.7] put the area between ~10% and ~49%
    h = max(1, int(round(rng.uniform(0.32, 0.7) * extent)))
    w = max(1, int(round(rng.uniform(0.32, 0.7) * extent)))
    top = int(rng.integers(0, extent - h + 1))
    left = int(rng.integers(0, extent - w + 1))
    mask = np.zeros((extent, extent))
    mask[top:top + h, left:left + w] = 1.0
    return mask


def _plant(features: FeaturePyramid, mask: np.ndarray, signatures, scale: float):
    levels = []
    for maps, sigs in zip(features.levels, signatures):
        h, w = maps[0].shape[1:]
        m = _resize_nearest(mask, h, w)
        levels.append([f + scale * s[:, None, None] * m[None]
                       for f, s in zip(maps, sigs)])
    return FeaturePyramid(levels)


def synth_episode(seed: int, k: int, spec: PyramidSpec,
                  skip_channels=(8, 8), signature_scale: float = 3.0) -> Episode:
    """Deterministic episode with a planted object signature. Same seed,
    same bits."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    frame = spec.extents[0] * 4

    signatures = [[rng.standard_normal(c) for _ in range(n)]
                  for n, c in zip(spec.layers, spec.channels)]
    skip_extents = (spec.extents[0] * 2, spec.extents[0] * 4)
    skip_sigs = [rng.standard_normal(c) for c in skip_channels]

    query_mask = _rect_mask(rng, frame)
    query_pyramid = _plant(synthetic_pyramid(int(rng.integers(2**63)), spec),
                           query_mask, signatures, signature_scale)
    query_skips = []
    for c, e, s in zip(skip_channels, skip_extents, skip_sigs):
        noise = rng.standard_normal((c, e, e))
        m = _resize_nearest(query_mask, e, e)
        query_skips.append(noise + signature_scale * s[:, None, None] * m[None])

    support_pyramids, support_masks = [], []
    for _ in range(k):
        m = _rect_mask(rng, frame)
        pyr = _plant(synthetic_pyramid(int(rng.integers(2**63)), spec),
                     m, signatures, signature_scale)
        support_pyramids.append(pyr)
        support_masks.append(m)

    return Episode(support_pyramids=support_pyramids, support_masks=support_masks,
                   query_pyramid=query_pyramid, query_skips=query_skips,
                   query_mask=query_mask, class_id=int(seed))


# priors and fusion


def prior_weights(query_last: np.ndarray, supports_last) -> list:
    """Per shot: max over support pixels of the ReLU-cosine similarity.

    query_last [C,Hq,Wq]; supports_last: K masked [C,Hs,Ws] maps.
    Returns K arrays [Hq,Wq] with values in [0,1].
    """
    return [cosine_correlation(query_last, s).max(axis=(2, 3))
            for s in supports_last]


def upsample_to(m: np.ndarray, target: tuple) -> np.ndarray:
    """Bilinear x2 repeatedly until the target extent is covered, then crop."""
    m = np.asarray(m, dtype=np.float64)[None]
    th, tw = target
    if m.shape[1] > th or m.shape[2] > tw:
        raise ShapeError(f"cannot upsample {m.shape[1:]} down to {target}")
    while m.shape[1] < th or m.shape[2] < tw:
        m = tensor_ops.upsample2x(m)
    return m[0, :th, :tw]


def fuse_soft(per_shot_fg, priors) -> np.ndarray:
    """Per-pixel softmax over the K priors, weighting the K foreground maps."""
    soft = np.stack([np.asarray(s, dtype=np.float64) for s in per_shot_fg])
    pri = np.stack([np.asarray(p, dtype=np.float64) for p in priors])
    if soft.shape != pri.shape:
        raise ShapeError(f"per-shot maps {soft.shape} and priors {pri.shape} "
                         f"must be congruent")
    w = tensor_ops.softmax(pri, axis=0)
    return (w * soft).sum(axis=0)


def fuse_kshot(per_shot_fg, priors, tau: float) -> np.ndarray:
    """Binary mask: prior-weighted foreground strictly above tau."""
    return (fuse_soft(per_shot_fg, priors) > tau).astype(np.float64)


def mask_avg_baseline(per_shot_fg, tau: float) -> np.ndarray:
    """Unweighted mean of the foreground maps, strictly above tau."""
    soft = np.stack([np.asarray(s, dtype=np.float64) for s in per_shot_fg])
    return (soft.mean(axis=0) > tau).astype(np.float64)


# episode forward


@dataclass
class PreparedShot:
    """Weight-independent work for one support shot, cached for training."""

    corr_levels: list
    prior: np.ndarray  # [Hq,Wq] at the coarsest level


def prepare_shots(ep: Episode) -> list:
    out = []
    for pyr, mask in zip(ep.support_pyramids, ep.support_masks):
        s_masked = mask_support(pyr, mask)
        corr = build_hypercorrelation(ep.query_pyramid, s_masked)
        prior = prior_weights(ep.query_pyramid.levels[-1][-1],
                              [s_masked.levels[-1][-1]])[0]
        out.append(PreparedShot(corr_levels=corr, prior=prior))
    return out


def fuse_prepared(per_shot_soft, shots, tau: float, target: tuple) -> np.ndarray:
    pri = [upsample_to(s.prior, target) for s in shots]
    return fuse_kshot([s[1] for s in per_shot_soft], pri, tau)


def forward_episode(ep: Episode, params: ModelParams):
    """Run every shot through the model and fuse.

    Returns (per_shot_soft, fused): K soft masks [2,H,W] and the fused
    binary mask [H,W]. Pure in (episode, weights).
    """
    shots = prepare_shots(ep)
    per_shot = [model_mod.forward_soft(params, s.corr_levels, ep.query_skips)
                for s in shots]
    fused = fuse_prepared(per_shot, shots, params.config.tau,
                          ep.query_mask.shape)
    return per_shot, fused


def t_episode_loss(tape, tensors, config: Config, ep: Episode, shots=None):
    """Mean per-shot cross-entropy. Returns (loss Variable, soft values)."""
    if shots is None:
        shots = prepare_shots(ep)
    loss = None
    softs = []
    for s in shots:
        logits, soft = model_mod.t_forward(tape, tensors, config,
                                           s.corr_levels, ep.query_skips)
        softs.append(soft.value)
        shot_loss = model_mod.t_mask_loss(tape, logits, ep.query_mask)
        loss = shot_loss if loss is None else ag.add(tape, loss, shot_loss)
    if len(shots) > 1:
        loss = ag.scale(tape, loss, 1.0 / len(shots))
    return loss, softs


# metrics


@dataclass
class MetricsAccumulator:
    """Running TP/FP/FN per class plus pooled foreground/background counts."""

    per_class: dict = field(default_factory=dict)
    fg: list = field(default_factory=lambda: [0, 0, 0])   # tp, fp, fn
    bg: list = field(default_factory=lambda: [0, 0, 0])

    def add(self, pred: np.ndarray, gt: np.ndarray, class_id: int) -> None:
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction {pred.shape} and truth {gt.shape} differ")
        for m in (pred, gt):
            if not np.isin(m, (0.0, 1.0)).all():
                raise ValidationError("metrics inputs must be binary masks")
        p = pred == 1
        g = gt == 1
        tp = int((p & g).sum())
        fp = int((p & ~g).sum())
        fn = int((~p & g).sum())
        tn = int((~p & ~g).sum())
        c = self.per_class.setdefault(class_id, [0, 0, 0])
        c[0] += tp
        c[1] += fp
        c[2] += fn
        self.fg[0] += tp
        self.fg[1] += fp
        self.fg[2] += fn
        # background as a class: its false positives are foreground misses
        self.bg[0] += tn
        self.bg[1] += fn
        self.bg[2] += fp

    def merge(self, other: "MetricsAccumulator") -> None:
        """Associative combine, for accumulators filled concurrently."""
        for k, (tp, fp, fn) in other.per_class.items():
            c = self.per_class.setdefault(k, [0, 0, 0])
            c[0] += tp
            c[1] += fp
            c[2] += fn
        for mine, theirs in ((self.fg, other.fg), (self.bg, other.bg)):
            for i in range(3):
                mine[i] += theirs[i]


def _iou(tp: int, fp: int, fn: int) -> float:
    union = tp + fp + fn
    return tp / union if union > 0 else 0.0


def miou(acc: MetricsAccumulator, classes=None) -> float:
    """Mean per-class IoU. Classes with no pixels at all are excluded
    (with a warning naming how many were skipped)."""
    ids = sorted(acc.per_class) if classes is None else list(range(classes))
    vals = []
    skipped = 0
    for k in ids:
        tp, fp, fn = acc.per_class.get(k, (0, 0, 0))
        if tp + fp + fn == 0:
            skipped += 1
        else:
            vals.append(_iou(tp, fp, fn))
    if skipped:
        warnings.warn(f"miou: excluded {skipped} class(es) with no evaluated "
                      f"pixels", stacklevel=2)
    return float(np.mean(vals)) if vals else 0.0


def fb_iou(acc: MetricsAccumulator) -> float:
    """Mean of pooled foreground and background IoU; an empty side counts 0."""
    total = sum(acc.fg) + acc.bg[0]
    if total == 0:
        raise ValidationError("fb_iou needs at least one evaluated pixel")
    return 0.5 * (_iou(*acc.fg) + _iou(*acc.bg))


def episode_iou(pred: np.ndarray, ep: Episode) -> float:
    """Single-episode foreground IoU of a binary prediction."""
    acc = MetricsAccumulator()
    acc.add(pred, ep.query_mask, ep.class_id)
    return miou(acc)
