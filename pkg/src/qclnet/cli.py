"""Command-line entry point.

Four commands:

    qclnet verify     run the self-verification suites
    qclnet forward    run one synthetic episode and emit the predicted mask
    qclnet train-toy  overfit seeded synthetic episodes, log step,loss,miou
    qclnet bench      parameter counts and kernel timings

Exit codes: 0 success, 1 verification failure, 2 numeric divergence,
3 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

import numpy as np

from . import autograd as ag
from . import backend, episodes, model, verify, weights
from .autograd import AdamState, Tape, adam_step, backward, zero_grads
from .config import Config, load_config
from .errors import QclnetError
from .quat_layers import (QuatConvParams, group_weight_count, quat_weight_count,
                          real_replacement_weight_count)
from .readout import binarize


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 3, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="qclnet",
                     description="quaternion correlation learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (("verify", "run the self-verification suites"),
                      ("forward", "run one episode and write its mask"),
                      ("train-toy", "overfit synthetic episodes"),
                      ("bench", "parameter counts and kernel timings")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", metavar="PATH",
                       help="key = value config file (defaults apply when absent)")
        p.add_argument("--seed", type=int, metavar="N",
                       help="override the config seed")
        p.add_argument("--suite", metavar="NAME",
                       help="verify only: run a single named suite")
        p.add_argument("--out", metavar="PATH",
                       help="output path (forward: mask PGM, train-toy: weights)")
    return parser


def write_pgm(mask: np.ndarray, path: str) -> None:
    """Binary mask -> 8-bit PGM (P5), 0 = background, 255 = foreground."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise QclnetError(f"mask must be 2D, got shape {m.shape}")
    data = ((m > 0.5).astype(np.uint8)) * np.uint8(255)
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def cmd_verify(args, cfg: Config) -> int:
    names = [args.suite] if args.suite else None
    results = verify.run_suites(names)
    ok = True
    for r in results:
        ok = ok and r.ok
        status = "PASS" if r.ok else "FAIL"
        print(f"{r.name}: {status} (max_err={r.max_err:.3e}) {r.detail}")
    return 0 if ok else 1


def cmd_forward(args, cfg: Config) -> int:
    ep = episodes.synth_episode(cfg.seed, cfg.k, cfg.pyramid_spec(),
                                skip_channels=cfg.skip_channels)
    params = model.init_model(cfg, cfg.seed)
    per_shot, fused = episodes.forward_episode(ep, params)
    for i, soft in enumerate(per_shot):
        iou = episodes.episode_iou(binarize(soft), ep)
        print(f"shot {i}: iou={iou:.4f}")
    acc = episodes.MetricsAccumulator()
    acc.add(fused, ep.query_mask, ep.class_id)
    print(f"fused: iou={episodes.miou(acc):.4f} fb_iou={episodes.fb_iou(acc):.4f}")
    out = args.out or "prediction.pgm"
    write_pgm(fused, out)
    print(f"wrote {out}")
    return 0


def cmd_train_toy(args, cfg: Config) -> int:
    eps = [episodes.synth_episode(cfg.seed + i, cfg.k, cfg.pyramid_spec(),
                                  skip_channels=cfg.skip_channels)
           for i in range(cfg.episodes)]
    shot_cache = [episodes.prepare_shots(e) for e in eps]
    params = model.init_model(cfg, cfg.seed)
    opt_params = list(params.variables().values())
    state = AdamState.for_params(opt_params)

    for step in range(cfg.steps):
        tape = Tape()
        tensors = params.variables()
        loss = None
        acc = episodes.MetricsAccumulator()
        for ep, shots in zip(eps, shot_cache):
            ep_loss, softs = episodes.t_episode_loss(tape, tensors, cfg, ep, shots)
            loss = ep_loss if loss is None else ag.add(tape, loss, ep_loss)
            fused = episodes.fuse_prepared(softs, shots, cfg.tau,
                                           ep.query_mask.shape)
            acc.add(fused, ep.query_mask, ep.class_id)
        if len(eps) > 1:
            loss = ag.scale(tape, loss, 1.0 / len(eps))
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            print(f"diverged at step {step}: loss is not finite", file=sys.stderr)
            return 2
        backward(tape, loss)
        print(f"{step},{loss_val:.6f},{episodes.miou(acc):.4f}")
        adam_step(opt_params, state, lr=cfg.lr)
        zero_grads(opt_params)

    out = args.out or "weights.qclw"
    weights.save_weights(params.named_tensors(), out)
    print(f"saved weights to {out}")
    return 0


def _layer_counts(params) -> list:
    prefixes = sorted({k.rsplit(".", 1)[0] for k in params.tensors
                       if k.startswith(("qcl.", "merge."))})
    rows = []
    for prefix in prefixes:
        conv = QuatConvParams(*(params.tensors[f"{prefix}.{n}"]
                                for n in ("wr", "wx", "wy", "wz",
                                          "br", "bx", "by", "bz")))
        rows.append((prefix, quat_weight_count(conv),
                     real_replacement_weight_count(conv),
                     group_weight_count(conv)))
    return rows


def _time_best(fn, reps: int = 3) -> float:
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args, cfg: Config) -> int:
    params = model.init_model(cfg, cfg.seed)
    total_q = total_r = total_g = 0
    for prefix, q, r, g in _layer_counts(params):
        total_q += q
        total_r += r
        total_g += g
        print(f"{prefix}: quat={q} real={r} group={g} ratio={r / q:.3f}")
    print(f"total: quat={total_q} real={total_r} group={total_g} "
          f"ratio={total_r / total_q:.3f}")

    rng = np.random.default_rng(cfg.seed)
    for name, mod in backend.kernel_modules():
        w2 = np.ascontiguousarray(rng.standard_normal((8, 8, 3, 3)))
        mod.conv2d_fwd(np.zeros((1, 8, 4, 4)), w2, 1, 1, 1, 1)  # warm-up / JIT
        for s in (16, 32, 64):
            x = np.ascontiguousarray(rng.standard_normal((1, 8, s, s)))
            dt = _time_best(lambda: mod.conv2d_fwd(x, w2, 1, 1, 1, 1))
            print(f"conv2d[{name}] {s}x{s}: {dt * 1e3:.3f} ms")
        k4 = np.ascontiguousarray(rng.standard_normal((4, 4, 3, 3, 3, 3)))
        mod.conv4d_fwd(np.zeros((4, 3, 3, 3, 3)), k4, 1, 1, 1, 1)
        for s in (4, 6, 8):
            x = np.ascontiguousarray(rng.standard_normal((4, s, s, s, s)))
            dt = _time_best(lambda: mod.conv4d_fwd(x, k4, 1, 1, 1, 1))
            print(f"conv4d[{name}] {s}^4: {dt * 1e3:.3f} ms")
    return 0


_COMMANDS = {
    "verify": cmd_verify,
    "forward": cmd_forward,
    "train-toy": cmd_train_toy,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = load_config(args.config) if args.config else Config()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        return _COMMANDS[args.command](args, cfg)
    except QclnetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
