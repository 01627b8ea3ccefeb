"""Self-verification suites.

Each suite replays one of the package's checkable claims against an
independent formulation (brute-force oracle, algebraic identity, or
statistical diagnostic) and reports its worst observed error. The CLI's
verify command runs them all; the test suite calls them individually.

Suites use fixed seeds so a pass is reproducible, and they resolve
package functions late (module attribute lookups) so a deliberately
corrupted implementation is caught rather than a stale import.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import aggregation, backend, episodes, model, quat_layers, quaternion, readout
from . import tensor_ops
from .config import Config
from .errors import ConfigError
from .quat_layers import QuatConvParams, QuatNormParams, QuatTensor
from .tensor_ops import Conv2dParams


@dataclass
class SuiteResult:
    name: str
    ok: bool
    max_err: float
    detail: str = ""


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    """Error relative to the comparison tensor's scale."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).max() / (np.abs(b).max() + 1e-12))


def _qrel(a: quaternion.Quaternion, b: quaternion.Quaternion) -> float:
    num = max(abs(x - y) for x, y in zip(a.as_tuple(), b.as_tuple()))
    return num / (quaternion.norm(a) + quaternion.norm(b) + 1e-12)


def suite_quat_core() -> SuiteResult:
    """Algebraic identities of the scalar quaternion product."""
    Q = quaternion.Quaternion
    ham, conj, nrm = quaternion.hamilton, quaternion.conjugate, quaternion.norm
    i, j, k = Q(0, 1, 0, 0), Q(0, 0, 1, 0), Q(0, 0, 0, 1)
    worst = 0.0

    ij = ham(i, j)
    ji = ham(j, i)
    if ij.as_tuple() != (0, 0, 0, 1) or ji.as_tuple() != (0, 0, 0, -1):
        return SuiteResult("quat_core", False, 1.0, "i*j != k or j*i != -k")

    rng = np.random.default_rng(4021)
    comps = rng.uniform(-10.0, 10.0, size=(10_000, 3, 4))
    for qa, pa, sa in comps:
        q, p, s = Q(*qa), Q(*pa), Q(*sa)
        worst = max(worst, _qrel(ham(ham(q, p), s), ham(q, ham(p, s))))
        got, want = nrm(ham(q, p)), nrm(q) * nrm(p)
        worst = max(worst, abs(got - want) / (got + want + 1e-12))
        worst = max(worst, _qrel(conj(ham(q, p)), ham(conj(p), conj(q))))
        worst = max(worst, _qrel(ham(q, conj(q)), Q(nrm(q) ** 2, 0, 0, 0)))
        worst = max(worst, _qrel(ham(q, quaternion.add(p, s)),
                                 quaternion.add(ham(q, p), ham(q, s))))
    return SuiteResult("quat_core", worst < 1e-10, worst,
                       "associativity, |qp|=|q||p|, conj anti-homomorphism, "
                       "q*conj(q), distributivity on 10^4 triples")


def block_matrix_kernel(wr, wx, wy, wz) -> np.ndarray:
    """The real [4out,4in,kH,kW] kernel equivalent to one quaternion conv,
    input planes stacked (r,x,y,z) on the channel axis."""
    rows = [np.concatenate(row, axis=1) for row in (
        (wr, -wx, -wy, -wz),
        (wx, wr, -wz, wy),
        (wy, wz, wr, -wx),
        (wz, -wy, wx, wr),
    )]
    return np.concatenate(rows, axis=0)


def suite_quat_conv() -> SuiteResult:
    """Quaternion conv vs its materialized block-matrix real conv."""
    rng = np.random.default_rng(517)
    worst = 0.0
    for _ in range(100):
        cin, cout = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        kk = int(rng.choice((1, 3)))
        pad = kk // 2
        planes = rng.standard_normal((4, cin, h, w))
        wplanes = rng.standard_normal((4, cout, cin, kk, kk))
        bias = rng.standard_normal((4, cout))
        params = QuatConvParams(*wplanes, *bias)
        got = quat_layers.quat_conv2d(QuatTensor(*planes), params,
                                      (1, 1), (pad, pad))
        big = Conv2dParams(block_matrix_kernel(*wplanes), bias.reshape(-1),
                           (1, 1), (pad, pad))
        want = tensor_ops.conv2d(planes.reshape(4 * cin, h, w), big)
        worst = max(worst, _rel(np.concatenate(got.planes, axis=0), want))
    return SuiteResult("quat_conv", worst < 1e-10, worst,
                       "100 random configs vs block-matrix real conv")


def suite_separable() -> SuiteResult:
    """Factorized 4D conv vs the naive full 4D conv."""
    rng = np.random.default_rng(902)
    worst = 0.0
    for _ in range(50):
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        hq, wq, hs, ws = (int(rng.integers(1, 5)) for _ in range(4))
        kq, ks = int(rng.choice((1, 3))), int(rng.choice((1, 3)))
        sq, ss = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        pq, ps = kq // 2, ks // 2
        x = rng.standard_normal((cin, hq, wq, hs, ws))
        kern = aggregation.SeparableKernel4d(
            rng.standard_normal((cout, cin, kq, kq)),
            rng.standard_normal((cout, cout, ks, ks)),
            stride_q=sq, stride_s=ss, pad_q=pq, pad_s=ps)
        got = aggregation.separable_conv4d(x, kern)
        want = tensor_ops.conv4d(x, aggregation.outer_product_kernel(kern),
                                 stride_q=sq, stride_s=ss, pad_q=pq, pad_s=ps)
        worst = max(worst, _rel(got, want))
    return SuiteResult("separable", worst < 1e-10, worst,
                       "50 random factorized kernels vs full 4D conv")


def suite_param_count() -> SuiteResult:
    """Exact 4x weight ratio and quat==group equality on every model layer."""
    cfg = Config(levels=(4, 2), layers=(2, 2), feat_channels=(4, 4),
                 skip_channels=(4, 4), d=8, decoder_width=8, skip_width=8)
    params = model.init_model(cfg, seed=3)
    prefixes = sorted({k.rsplit(".", 1)[0] for k in params.tensors
                       if k.startswith(("qcl.", "merge."))})
    checked = 0
    for prefix in prefixes:
        conv = QuatConvParams(*(params.tensors[f"{prefix}.{n}"]
                                for n in ("wr", "wx", "wy", "wz",
                                          "br", "bx", "by", "bz")))
        quat = quat_layers.quat_weight_count(conv)
        real = quat_layers.real_replacement_weight_count(conv)
        group = quat_layers.group_weight_count(conv)
        if real != 4 * quat or group != quat:
            return SuiteResult("param_count", False, 1.0,
                               f"layer {prefix}: real={real} quat={quat} "
                               f"group={group}")
        checked += 1
    return SuiteResult("param_count", checked > 0, 0.0,
                       f"{checked} quaternion layers at exact ratio 4, "
                       f"group == quat")


def suite_quat_norm() -> SuiteResult:
    """Post-normalization statistics: zero quaternion mean, unit average
    component variance per group (gamma=1, beta=0)."""
    rng = np.random.default_rng(88)
    groups, c, h, w = 4, 16, 32, 32
    planes = [rng.standard_normal((c, h, w)) * s for s in (1.0, 2.0, 3.0, 4.0)]
    out = quat_layers.quat_norm(
        QuatTensor(*planes),
        QuatNormParams(np.ones(groups), np.zeros((groups, 4)), groups, 1e-12))
    worst_mean, worst_var = 0.0, 0.0
    for gi in range(groups):
        sl = slice(gi * (c // groups), (gi + 1) * (c // groups))
        grp = [p[sl] for p in out.planes]
        worst_mean = max(worst_mean, max(abs(p.mean()) for p in grp))
        avg_var = np.mean([p.var() for p in grp])
        worst_var = max(worst_var, abs(avg_var - 1.0))
    ok = worst_mean < 1e-8 and worst_var < 1e-6
    return SuiteResult("quat_norm", ok, max(worst_mean, worst_var),
                       f"group mean <= {worst_mean:.2e}, "
                       f"avg variance off by <= {worst_var:.2e}, "
                       f"{(c // groups) * h * w} elements per group per plane")


def suite_q_proper() -> SuiteResult:
    """Augmented covariance of an i.i.d. equal-variance sample is ~ v*I."""
    rng = np.random.default_rng(1234)
    v = 2.0
    sample = rng.normal(0.0, np.sqrt(v), size=(100_000, 4))
    cov = quat_layers.augmented_covariance(sample)
    err = np.abs(cov - v * np.eye(4)) / v
    worst = float(err.max())
    return SuiteResult("q_proper", worst < 0.05, worst,
                       "n=10^5 sample, elementwise within 5% of v*I")


def _grad_checks():
    from . import autograd as ag
    rng = np.random.default_rng(7)

    def away_from_zero(shape, margin=1e-3):
        x = rng.standard_normal(shape)
        return np.where(np.abs(x) < margin, margin, x)

    checks = []

    w1 = rng.standard_normal((3, 2, 3, 3))
    b1 = rng.standard_normal(3)

    def sq_sum(t, v):
        return ag.rsum(t, ag.mul(t, v, v))

    x_conv = rng.standard_normal((2, 5, 5))
    checks.append(("conv2d/input", x_conv,
                   lambda t, x: sq_sum(t, ag.conv2d(t, x, w1, b1, (1, 1), (1, 1)))))
    checks.append(("conv2d/input/stride2", x_conv,
                   lambda t, x: sq_sum(t, ag.conv2d(t, x, w1, b1, (2, 2), (1, 1)))))
    x_fixed = rng.standard_normal((2, 4, 4))
    checks.append(("conv2d/weight", rng.standard_normal((3, 2, 3, 3)),
                   lambda t, w: sq_sum(t, ag.conv2d(t, x_fixed, w, None,
                                                    (1, 1), (1, 1)))))
    checks.append(("conv2d/bias", rng.standard_normal(3),
                   lambda t, b: sq_sum(t, ag.conv2d(t, x_fixed, w1, b,
                                                    (1, 1), (1, 1)))))
    checks.append(("upsample2x", rng.standard_normal((2, 3, 4)),
                   lambda t, x: sq_sum(t, ag.upsample2x(t, x))))
    soft_coef = rng.standard_normal((4, 5))
    checks.append(("softmax", rng.standard_normal((4, 5)),
                   lambda t, x: ag.rsum(t, ag.mul(t, ag.softmax(t, x, 0),
                                                  soft_coef))))
    checks.append(("log_softmax", rng.standard_normal((4, 5)),
                   lambda t, x: ag.rsum(t, ag.mul(t, ag.log_softmax(t, x, 0),
                                                  soft_coef))))
    def lin(t, v, coef):
        # sum(out * coef): sum-of-squares is blind to normalizers (their
        # outputs have fixed second moment), a random functional is not
        return ag.rsum(t, ag.mul(t, v, coef))

    gn_g = rng.standard_normal(8)
    gn_b = rng.standard_normal(8)
    gn_coef = rng.standard_normal((8, 3, 3))
    checks.append(("group_norm", rng.standard_normal((8, 3, 3)),
                   lambda t, x: lin(t, aggregation.t_group_norm(
                       t, x, 4, gn_g, gn_b, 1e-5), gn_coef)))

    sep_kq = rng.standard_normal((2, 2, 3, 3))
    sep_ks = rng.standard_normal((2, 2, 3, 3))
    sep_x = rng.standard_normal((2, 3, 3, 3, 3))
    checks.append(("separable/input", sep_x,
                   lambda t, x: sq_sum(t, aggregation.t_separable_conv4d(
                       t, x, sep_kq, sep_ks, 1, 2, 1, 1))))
    checks.append(("separable/kernels", np.stack([sep_kq, sep_ks]),
                   lambda t, kk: sq_sum(t, aggregation.t_separable_conv4d(
                       t, ag.Variable(sep_x, requires_grad=False),
                       ag.getitem(t, kk, 0), ag.getitem(t, kk, 1), 1, 1, 1, 1))))

    qw = rng.standard_normal((4, 2, 2, 3, 3))
    qb = rng.standard_normal((4, 2))

    def planes_of(t, v, shape):
        return tuple(ag.reshape(t, ag.getitem(t, v, d), shape) for d in range(4))

    def quat_sq_sum(t, planes):
        out = None
        for p in planes:
            s = ag.rsum(t, ag.mul(t, p, p))
            out = s if out is None else ag.add(t, out, s)
        return out

    def quat_lin(t, planes, coefs):
        out = None
        for p, c in zip(planes, coefs):
            s = ag.rsum(t, ag.mul(t, p, c))
            out = s if out is None else ag.add(t, out, s)
        return out

    checks.append(("quat_conv2d/input", rng.standard_normal((4, 2, 3, 3)),
                   lambda t, x: quat_sq_sum(t, quat_layers.t_quat_conv2d(
                       t, planes_of(t, x, (2, 3, 3)), tuple(qw), tuple(qb),
                       (1, 1), (1, 1)))))
    qx_fixed = tuple(rng.standard_normal((2, 3, 3)) for _ in range(4))
    checks.append(("quat_conv2d/weights", qw.copy(),
                   lambda t, w: quat_sq_sum(t, quat_layers.t_quat_conv2d(
                       t, qx_fixed, planes_of(t, w, (2, 2, 3, 3)), tuple(qb),
                       (1, 1), (1, 1)))))
    qn_gamma = rng.standard_normal(2)
    qn_beta = rng.standard_normal((2, 4))
    qn_coefs = rng.standard_normal((4, 4, 2, 2))
    checks.append(("quat_norm", away_from_zero((4, 4, 2, 2)),
                   lambda t, x: quat_lin(t, quat_layers.t_quat_norm(
                       t, planes_of(t, x, (4, 2, 2)), qn_gamma, qn_beta,
                       2, 1e-5), qn_coefs)))
    bw = rng.standard_normal((4, 4, 4, 3, 3)) * 0.5
    bb = rng.standard_normal((4, 4)) * 0.1
    bg = rng.standard_normal(2) + 2.0
    bbeta = rng.standard_normal((2, 4))
    blk_coefs = rng.standard_normal((4, 4, 2, 2))
    checks.append(("qcl_block", rng.standard_normal((4, 4, 2, 2)),
                   lambda t, x: quat_lin(t, quat_layers.t_qcl_block(
                       t, planes_of(t, x, (4, 2, 2)), tuple(bw), tuple(bb),
                       bg, bbeta, 2, 1e-5), blk_coefs)))
    fine = tuple(rng.standard_normal((4, 3, 3)) for _ in range(4))
    agg_coefs = rng.standard_normal((4, 4, 3, 3))
    checks.append(("quat_aggregation/deep", rng.standard_normal((4, 4, 2, 2)),
                   lambda t, x: quat_lin(t, quat_layers.t_quat_aggregation(
                       t, planes_of(t, x, (4, 2, 2)), fine, tuple(bw), tuple(bb),
                       bg, bbeta, 2, 1e-5), agg_coefs)))
    checks.append(("quat_to_real", rng.standard_normal((4, 3, 2, 2)),
                   lambda t, x: sq_sum(t, readout.t_quat_to_real(
                       t, planes_of(t, x, (3, 2, 2))))))

    dec_skips = [rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 8, 8))]
    dec_proj = [(rng.standard_normal((3, 2, 1, 1)), rng.standard_normal(3))
                for _ in range(2)]
    dec_ref = [(rng.standard_normal((4, 4 + 3, 3, 3)) * 0.4, rng.standard_normal(4)),
               (rng.standard_normal((4, 4 + 3, 3, 3)) * 0.4, rng.standard_normal(4))]
    dec_head = (rng.standard_normal((2, 4, 1, 1)), rng.standard_normal(2))
    gt = (rng.uniform(size=(8, 8)) > 0.5).astype(np.float64)

    def decode_loss(t, fr):
        logits, _ = readout.t_decode(t, fr, dec_skips, dec_proj, dec_ref, dec_head)
        return model.t_mask_loss(t, logits, gt)

    checks.append(("decode+loss", rng.standard_normal((4, 2, 2)), decode_loss))
    return checks


def suite_gradients() -> SuiteResult:
    """Finite-difference check of every differentiable op on the training path."""
    from .autograd import finite_diff_check
    worst = 0.0
    worst_name = ""
    for name, x, f in _grad_checks():
        err = finite_diff_check(f, x, h=1e-5)
        if err > worst:
            worst, worst_name = err, name
    return SuiteResult("gradients", worst < 1e-4, worst,
                       f"worst op: {worst_name}")


def suite_fusion() -> SuiteResult:
    """Prior range, strict threshold boundary, K=1 bit-exactness, K=5 oracle."""
    rng = np.random.default_rng(31)
    worst = 0.0

    q = rng.standard_normal((6, 5, 5))
    sups = [np.maximum(rng.standard_normal((6, 5, 5)), 0.0) for _ in range(3)]
    sups[0][:, :3] = 0.0
    for w in episodes.prior_weights(q, sups):
        if w.min() < 0.0 or w.max() > 1.0:
            return SuiteResult("fusion", False, 1.0, "prior out of [0,1]")

    half = np.full((4, 4), 0.5)
    pri = [rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4))]
    boundary = episodes.fuse_kshot([half, half], [pri[0], pri[0]], tau=0.5)
    if boundary.any():
        return SuiteResult("fusion", False, 1.0, "value == tau must give 0")

    soft = tensor_ops.softmax(rng.standard_normal((2, 6, 6)), axis=0)
    one = episodes.fuse_kshot([soft[1]], [rng.uniform(size=(6, 6))], tau=0.5)
    if not np.array_equal(one, readout.binarize(soft)):
        return SuiteResult("fusion", False, 1.0,
                           "K=1 fusion != single-shot binarization")

    for _ in range(10):
        fg = rng.uniform(size=(5, 4, 4))
        pw = rng.uniform(size=(5, 4, 4)) * 3.0
        got = episodes.fuse_soft(list(fg), list(pw))
        want = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                e = np.exp(pw[:, i, j] - pw[:, i, j].max())
                want[i, j] = (e / e.sum() * fg[:, i, j]).sum()
        worst = max(worst, float(np.abs(got - want).max()))
    return SuiteResult("fusion", worst < 1e-12, worst,
                       "K=5 fused soft vs per-pixel oracle")


def _table_masks(tp: int, fp: int, fn: int, tn: int):
    pred = np.concatenate([np.ones(tp + fp), np.zeros(fn + tn)])
    gt = np.concatenate([np.ones(tp), np.zeros(fp), np.ones(fn), np.zeros(tn)])
    return pred.reshape(1, -1), gt.reshape(1, -1)


def suite_metrics() -> SuiteResult:
    """Ten hand-computed confusion tables, compared exactly."""
    tables = [
        # tp, fp, fn, tn
        (8, 2, 0, 5),
        (10, 0, 0, 10),
        (0, 0, 10, 10),
        (0, 10, 0, 10),
        (5, 5, 5, 5),
        (1, 0, 0, 0),
        (3, 1, 2, 14),
        (7, 3, 0, 0),
        (2, 2, 2, 94),
        (50, 25, 25, 100),
    ]
    for tp, fp, fn, tn in tables:
        acc = episodes.MetricsAccumulator()
        acc.add(*_table_masks(tp, fp, fn, tn), class_id=0)
        want_iou = tp / (tp + fp + fn) if tp + fp + fn else None
        got = episodes.miou(acc) if want_iou is not None else None
        if want_iou is not None and got != want_iou:
            return SuiteResult("metrics", False, abs(got - want_iou),
                               f"miou({tp},{fp},{fn}) = {got}, want {want_iou}")
        fg = tp / (tp + fp + fn) if tp + fp + fn else 0.0
        bg = tn / (tn + fn + fp) if tn + fn + fp else 0.0
        want_fb = 0.5 * (fg + bg)
        got_fb = episodes.fb_iou(acc)
        if got_fb != want_fb:
            return SuiteResult("metrics", False, abs(got_fb - want_fb),
                               f"fb_iou({tp},{fp},{fn},{tn}) = {got_fb}, "
                               f"want {want_fb}")
    acc = episodes.MetricsAccumulator()
    acc.add(*_table_masks(4, 0, 4, 0), class_id=0)   # IoU 0.5
    acc.add(*_table_masks(6, 0, 0, 3), class_id=1)   # IoU 1.0
    if episodes.miou(acc) != 0.75:
        return SuiteResult("metrics", False, 1.0, "two-class mean wrong")
    return SuiteResult("metrics", True, 0.0,
                       "10 confusion tables plus a two-class mean, exact")


def _toy_config() -> Config:
    return Config(levels=(4, 2), layers=(2, 2), feat_channels=(4, 4),
                  skip_channels=(4, 4), d=8, decoder_width=8, skip_width=8,
                  k=2, seed=5)


def suite_determinism() -> SuiteResult:
    """Bit-identical forwards across runs and thread caps; weight round-trip."""
    cfg = _toy_config()
    ep = episodes.synth_episode(7, cfg.k, cfg.pyramid_spec(),
                                skip_channels=cfg.skip_channels)
    params = model.init_model(cfg, seed=11)

    def run():
        softs, fused = episodes.forward_episode(ep, params)
        return [s.copy() for s in softs], fused.copy()

    s1, f1 = run()
    s2, f2 = run()
    same = all(np.array_equal(a, b) for a, b in zip(s1, s2)) \
        and np.array_equal(f1, f2)
    for cap in (1, 2):
        backend.set_thread_cap(cap)
        st, ft = run()
        same = same and np.array_equal(f1, ft) \
            and all(np.array_equal(a, b) for a, b in zip(s1, st))
    backend.set_thread_cap(0)
    if not same:
        return SuiteResult("determinism", False, 1.0,
                           "forward differs across runs or thread caps")

    fd, path = tempfile.mkstemp(suffix=".qclw")
    os.close(fd)
    try:
        from . import weights as weights_mod
        weights_mod.save_weights(params.named_tensors(), path)
        loaded = weights_mod.load_weights(path)
        exact = list(loaded) == [n for n, _ in params.named_tensors()] and all(
            np.array_equal(loaded[n], a) for n, a in params.named_tensors())
    finally:
        os.unlink(path)
    if not exact:
        return SuiteResult("determinism", False, 1.0,
                           "weight round-trip not bit-exact")
    return SuiteResult("determinism", True, 0.0,
                       "2 reruns, thread caps 1 and 2, weight round-trip")


SUITES = {
    "quat_core": suite_quat_core,
    "quat_conv": suite_quat_conv,
    "separable": suite_separable,
    "param_count": suite_param_count,
    "quat_norm": suite_quat_norm,
    "q_proper": suite_q_proper,
    "gradients": suite_gradients,
    "fusion": suite_fusion,
    "metrics": suite_metrics,
    "determinism": suite_determinism,
}


def run_suites(names=None) -> list:
    if names is None:
        names = list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suite {unknown[0]!r}; "
                          f"available: {', '.join(SUITES)}")
    return [SUITES[n]() for n in names]
