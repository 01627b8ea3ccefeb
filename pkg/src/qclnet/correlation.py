"""Masked multi-channel 4D correlation pyramid.

Query and support feature pyramids (stand-ins for a frozen backbone)
are compared pixel-against-pixel with ReLU-clamped cosine similarity,
one 4D volume per feature layer, stacked per pyramid level. Nothing
here is trainable, so these are plain forward functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

ZERO_NORM_GUARD = 1e-12


@dataclass(frozen=True)
class PyramidSpec:
    """Per-level spatial extents, layer counts, and channel widths.

    Extents must shrink by ceil-halving level to level, mirroring a
    strided backbone; at least one level, every count positive.
    """

    extents: tuple[int, ...]
    layers: tuple[int, ...]
    channels: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (len(self.extents) == len(self.layers) == len(self.channels)):
            raise ValidationError(
                f"extents/layers/channels lengths differ: "
                f"{len(self.extents)}/{len(self.layers)}/{len(self.channels)}")
        if len(self.extents) == 0:
            raise ValidationError("pyramid needs at least one level")
        if any(e < 1 for e in self.extents) or any(n < 1 for n in self.layers) \
                or any(c < 1 for c in self.channels):
            raise ValidationError(f"extents, layer counts and channels must be >= 1: "
                                  f"{self.extents}, {self.layers}, {self.channels}")
        for a, b in zip(self.extents, self.extents[1:]):
            if b != (a + 1) // 2:
                raise ValidationError(
                    f"level extents must ceil-halve, got {a} -> {b}")


@dataclass
class FeaturePyramid:
    """levels[p] is a list of [C_p, H_p, W_p] maps sharing spatial extent."""

    levels: list

    def __post_init__(self) -> None:
        for p, maps in enumerate(self.levels):
            if not maps:
                raise ValidationError(f"pyramid level {p} has no feature maps")
            base = maps[0].shape
            for m in maps:
                if m.ndim != 3 or m.shape[1:] != base[1:]:
                    raise ShapeError(f"level {p} maps disagree on spatial extent: "
                                     f"{m.shape} vs {base}")


def synthetic_pyramid(seed: int, spec: PyramidSpec) -> FeaturePyramid:
    """Deterministic pseudo-random features; same seed gives identical bits."""
    rng = np.random.default_rng(seed)
    levels = []
    for e, n, c in zip(spec.extents, spec.layers, spec.channels):
        levels.append([rng.standard_normal((c, e, e)) for _ in range(n)])
    return FeaturePyramid(levels)


def _resize_nearest(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    sh, sw = mask.shape
    ri = np.minimum(((np.arange(h) + 0.5) * sh / h).astype(np.int64), sh - 1)
    ci = np.minimum(((np.arange(w) + 0.5) * sw / w).astype(np.int64), sw - 1)
    return mask[np.ix_(ri, ci)]


def mask_support(features: FeaturePyramid, mask: np.ndarray) -> FeaturePyramid:
    """Zero background support pixels: each map times the resized binary mask."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValidationError(f"mask must be 2D, got shape {mask.shape}")
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ValidationError("mask must contain only 0 and 1")
    levels = []
    for maps in features.levels:
        h, w = maps[0].shape[1:]
        m = _resize_nearest(mask, h, w)
        levels.append([f * m[None] for f in maps])
    return FeaturePyramid(levels)


def cosine_correlation(fq: np.ndarray, fs: np.ndarray) -> np.ndarray:
    """ReLU-clamped cosine of channel vectors at every pixel pair.

    fq [C,Hq,Wq], fs [C,Hs,Ws] -> [Hq,Wq,Hs,Ws] in [0,1]. A pixel whose
    channel vector has (near-)zero norm carries no direction; its row or
    column is 0.
    """
    fq = np.asarray(fq, dtype=np.float64)
    fs = np.asarray(fs, dtype=np.float64)
    if fq.shape[0] != fs.shape[0]:
        raise ShapeError(f"channel counts differ: query {fq.shape} vs support {fs.shape}")
    c = fq.shape[0]

    def unit_rows(f):
        v = f.reshape(c, -1).T
        n = np.linalg.norm(v, axis=1)
        return v / np.where(n < ZERO_NORM_GUARD, 1.0, n)[:, None]

    cos = unit_rows(fq) @ unit_rows(fs).T
    cos = np.clip(cos, 0.0, 1.0)
    return cos.reshape(fq.shape[1], fq.shape[2], fs.shape[1], fs.shape[2])


def build_hypercorrelation(q: FeaturePyramid, s_masked: FeaturePyramid) -> list:
    """Per level, stack the per-layer 4D correlations on a leading channel axis.

    Returns a list of [N_p, Hq, Wq, Hs, Ws] arrays, one per pyramid level.
    """
    if len(q.levels) != len(s_masked.levels):
        raise ShapeError(f"level counts differ: {len(q.levels)} vs {len(s_masked.levels)}")
    out = []
    for p, (qm, sm) in enumerate(zip(q.levels, s_masked.levels)):
        if len(qm) != len(sm):
            raise ShapeError(f"level {p} layer counts differ: {len(qm)} vs {len(sm)}")
        corrs = []
        for fq, fs in zip(qm, sm):
            if fq.shape != fs.shape:
                raise ShapeError(f"level {p} layer shapes differ: {fq.shape} vs {fs.shape}")
            corrs.append(cosine_correlation(fq, fs))
        out.append(np.stack(corrs, axis=0))
    return out
