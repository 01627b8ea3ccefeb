"""Model assembly: every learnable tensor, its initialization, and the
end-to-end forward from correlation volumes to the 2-channel soft mask.

Tensors live in one insertion-ordered dict keyed by dotted names:

    cam.{level}.{layer}.{kq,ks,gn_g,gn_b}
    qcl.{level}.{block}.{wr,wx,wy,wz,br,bx,by,bz,qn_g,qn_b}
    merge.{fine_level}.{same quaternion block fields}
    dec.proj{i}.{k,b}  dec.refine{i}.{k,b}  dec.head.{k,b}

The same dict drives pure inference (arrays) and training (Variables
wrapping the same arrays, so optimizer updates land in place).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import aggregation, autograd as ag, quat_layers, readout, tensor_ops
from .autograd import Variable
from .config import Config
from .errors import ShapeError


def _glorot(rng, out_ch: int, in_ch: int, kh: int, kw: int) -> np.ndarray:
    bound = np.sqrt(6.0 / ((in_ch + out_ch) * kh * kw))
    return rng.uniform(-bound, bound, size=(out_ch, in_ch, kh, kw))


def _quat_planes(rng, out_ch: int, in_ch: int, kh: int, kw: int):
    """Polar quaternion weight init: uniform magnitude under a variance-
    preserving bound, a uniform rotation axis, and a uniform phase."""
    shape = (out_ch, in_ch, kh, kw)
    mag = rng.uniform(0.0, 1.0 / np.sqrt(2.0 * (in_ch + out_ch) * kh * kw), shape)
    axis = rng.standard_normal((3,) + shape)
    axis /= np.maximum(np.linalg.norm(axis, axis=0, keepdims=True), 1e-12)
    angle = rng.uniform(-np.pi, np.pi, shape)
    wr = mag * np.cos(angle)
    imag = mag * np.sin(angle) * axis
    return wr, imag[0], imag[1], imag[2]


@dataclass
class ModelParams:
    """All learnable tensors plus the config that fixes their shapes."""

    config: Config
    tensors: dict
    _vars: dict = field(default_factory=dict, repr=False)

    def named_tensors(self):
        return list(self.tensors.items())

    def variables(self) -> dict:
        """name -> Variable views sharing the tensors' memory (cached)."""
        if not self._vars:
            self._vars = {k: Variable(v) for k, v in self.tensors.items()}
        return self._vars

    def load_values(self, loaded: dict) -> None:
        """Copy a loaded name->array dict into the live tensors, in place."""
        missing = [k for k in self.tensors if k not in loaded]
        extra = [k for k in loaded if k not in self.tensors]
        if missing or extra:
            bad = (missing + extra)[0]
            raise ShapeError(f"weight set does not match model: tensor {bad!r} "
                             f"{'missing from file' if missing else 'not in model'}")
        for k, arr in self.tensors.items():
            if loaded[k].shape != arr.shape:
                raise ShapeError(f"tensor {k!r} has shape {loaded[k].shape}, "
                                 f"model expects {arr.shape}")
            arr[...] = loaded[k]


def _quat_block_tensors(rng, prefix: str, d: int, groups: int, out: dict) -> None:
    wr, wx, wy, wz = _quat_planes(rng, d, d, 3, 3)
    out[f"{prefix}.wr"] = wr
    out[f"{prefix}.wx"] = wx
    out[f"{prefix}.wy"] = wy
    out[f"{prefix}.wz"] = wz
    for b in ("br", "bx", "by", "bz"):
        out[f"{prefix}.{b}"] = np.zeros(d)
    out[f"{prefix}.qn_g"] = np.ones(groups)
    out[f"{prefix}.qn_b"] = np.zeros((groups, 4))


def init_model(config: Config, seed: int) -> ModelParams:
    """Build every tensor with a documented, seed-deterministic init."""
    rng = np.random.default_rng(seed)
    t: dict = {}
    d, g = config.d, config.groups

    for p, extent in enumerate(config.levels):
        strides = aggregation.plan_support_strides(extent)
        for li, _ in enumerate(strides):
            in_ch = config.layers[p] if li == 0 else d
            t[f"cam.{p}.{li}.kq"] = _glorot(rng, d, in_ch, 3, 3)
            t[f"cam.{p}.{li}.ks"] = _glorot(rng, d, d, 3, 3)
            t[f"cam.{p}.{li}.gn_g"] = np.ones(d)
            t[f"cam.{p}.{li}.gn_b"] = np.zeros(d)

    for p in range(len(config.levels)):
        for b in range(config.qcl_depth):
            _quat_block_tensors(rng, f"qcl.{p}.{b}", d, g, t)

    for p in range(len(config.levels) - 1):
        _quat_block_tensors(rng, f"merge.{p}", d, g, t)

    width = config.decoder_width
    prev = d
    for i, skip_ch in enumerate(config.skip_channels):
        t[f"dec.proj{i}.k"] = _glorot(rng, config.skip_width, skip_ch, 1, 1)
        t[f"dec.proj{i}.b"] = np.zeros(config.skip_width)
        t[f"dec.refine{i}.k"] = _glorot(rng, width, prev + config.skip_width, 3, 3)
        t[f"dec.refine{i}.b"] = np.zeros(width)
        prev = width
    t["dec.head.k"] = _glorot(rng, 2, width, 1, 1)
    t["dec.head.b"] = np.zeros(2)

    return ModelParams(config=config, tensors=t)


def _quat_block_args(tensors, prefix: str):
    weights = tuple(tensors[f"{prefix}.{w}"] for w in ("wr", "wx", "wy", "wz"))
    biases = tuple(tensors[f"{prefix}.{b}"] for b in ("br", "bx", "by", "bz"))
    return weights, biases, tensors[f"{prefix}.qn_g"], tensors[f"{prefix}.qn_b"]


def t_forward(tape, tensors, config: Config, corr_levels, skips):
    """Correlations + skips -> (logits, soft), both [2,H,W] Variables.

    tensors maps the names above to Variables (training) or arrays (pure
    inference); corr_levels holds one [N_p,Hq,Wq,Hs,Ws] array per level.
    """
    if len(corr_levels) != len(config.levels):
        raise ShapeError(f"got {len(corr_levels)} correlation levels, "
                         f"config has {len(config.levels)}")
    eps = tensor_ops.DEFAULT_EPS
    g = config.groups

    qhat = []
    for p, extent in enumerate(config.levels):
        strides = aggregation.plan_support_strides(extent)
        layer_args = []
        for li, ss in enumerate(strides):
            layer_args.append((tensors[f"cam.{p}.{li}.kq"],
                               tensors[f"cam.{p}.{li}.ks"], ss,
                               tensors[f"cam.{p}.{li}.gn_g"],
                               tensors[f"cam.{p}.{li}.gn_b"], g, eps))
        c = corr_levels[p]
        v = c if isinstance(c, Variable) else Variable(c, requires_grad=False)
        agg = aggregation.t_aggregate(tape, v, layer_args)
        planes = quat_layers.t_encapsulate(tape, agg)
        for b in range(config.qcl_depth):
            w, bias, qg, qb = _quat_block_args(tensors, f"qcl.{p}.{b}")
            planes = quat_layers.t_qcl_block(tape, planes, w, bias, qg, qb, g, eps)
        qhat.append(planes)

    current = qhat[-1]
    for p in range(len(config.levels) - 2, -1, -1):
        w, bias, qg, qb = _quat_block_args(tensors, f"merge.{p}")
        current = quat_layers.t_quat_aggregation(tape, current, qhat[p],
                                                 w, bias, qg, qb, g, eps)

    fr = readout.t_quat_to_real(tape, current)

    skip_vars = [s if isinstance(s, Variable)
                 else Variable(np.asarray(s, dtype=np.float64), requires_grad=False)
                 for s in skips]
    projections = [(tensors[f"dec.proj{i}.k"], tensors[f"dec.proj{i}.b"])
                   for i in range(len(config.skip_channels))]
    refines = [(tensors[f"dec.refine{i}.k"], tensors[f"dec.refine{i}.b"])
               for i in range(len(config.skip_channels))]
    head = (tensors["dec.head.k"], tensors["dec.head.b"])
    return readout.t_decode(tape, fr, skip_vars, projections, refines, head)


def forward_soft(params: ModelParams, corr_levels, skips) -> np.ndarray:
    """Pure forward to the [2,H,W] soft mask."""
    _, soft = t_forward(None, params.tensors, params.config, corr_levels, skips)
    return soft.value


def t_mask_loss(tape, logits, gt_mask: np.ndarray):
    """Per-pixel 2-class cross-entropy against a binary [H,W] mask."""
    gt = np.asarray(gt_mask, dtype=np.float64)
    onehot = np.stack([1.0 - gt, gt], axis=0)
    lsm = ag.log_softmax(tape, logits, axis=0)
    picked = ag.mul(tape, lsm, onehot)
    return ag.scale(tape, ag.rsum(tape, picked), -1.0 / gt.size)
