"""Command-line entry point: ``guidedcrf {infer,train,bench,check}``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import bench as bm
from . import io
from .config import ConfigError, RunConfig
from .model import ARCHS, CRFModel
from .training import TrainingDiverged, train_pipeline
from .verify import CHECKS, run_checks

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("guidedcrf")


class UsageError(Exception):
    pass


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.apply_overrides(args.set)


def _model_for_bundle(bundle_names, labels: int, cfg: RunConfig) -> CRFModel:
    """Model holding exactly the components present in a parameter bundle."""
    return CRFModel.from_flags(
        labels,
        context=any(n.startswith("context.net.") for n in bundle_names),
        global_nodes=any(n in bundle_names for n in ("context.mu_g", "context.global.scale")),
        guidance=any(n.startswith("guidance.") for n in bundle_names),
        channels=cfg.channels, k1=cfg.k1, k2=cfg.k2, filter_cfg=cfg.filter_config(),
        lam=cfg.lam, iters=cfg.iters, context_iters=cfg.context_iters,
    )


def _expected_shapes(model: CRFModel) -> dict[str, tuple]:
    shapes = {k: np.shape(v) for k, v in model.params().items()}
    if model.guidance is not None:
        shapes["guidance.lambda"] = ()
        shapes["guidance.filter"] = (3,)
    return shapes


def load_model(path, labels: int, cfg: RunConfig) -> CRFModel:
    """Build a model from a parameter bundle, validating every shape against ``cfg``.

    Filter settings and lambda stored in the bundle apply unless the run
    config sets them explicitly.
    """
    names = set(io.load_bundle(path))
    model = _model_for_bundle(names, labels, cfg)
    bundle = io.load_bundle(path, _expected_shapes(model))
    missing = set(model.params()) - set(bundle)
    if missing:
        raise io.ShapeMismatch(f"{path}: bundle lacks {sorted(missing)}")
    model.set_params({k: v for k, v in bundle.items() if k in model.params()})
    if model.guidance is not None:
        if "guidance.lambda" in bundle and "lambda" not in cfg.explicit:
            model.guidance.lam = float(bundle["guidance.lambda"])
        if "guidance.filter" in bundle:
            stored = io.filter_config_from_entry(bundle["guidance.filter"])
            if "radius" not in cfg.explicit:
                cfg.radius = stored.radius
            if "epsilon" not in cfg.explicit:
                cfg.epsilon = stored.epsilon
        model.guidance.filter_cfg = cfg.filter_config(fast=True)
    return model


def save_model(path, model: CRFModel) -> None:
    params = dict(model.params())
    if model.guidance is not None:
        params["guidance.lambda"] = np.asarray(model.guidance.lam)
        params["guidance.filter"] = io.filter_config_entry(model.guidance.filter_cfg)
    io.save_bundle(path, params)


# -- commands ----------------------------------------------------------------

def cmd_infer(args) -> int:
    if not (args.out or args.out_label):
        raise UsageError("give --out and/or --out-label")
    cfg = _load_config(args)
    if args.fast and cfg.subsample < 2:
        raise UsageError("--fast needs subsample >= 2")
    unary = io.load_score_map(args.unary)
    image = io.load_image(args.image)
    if unary.shape[0] > image.shape[0] or unary.shape[1] > image.shape[1]:
        raise UsageError(f"unary dims {unary.shape[:2]} exceed image dims {image.shape[:2]}")
    model = load_model(args.params, unary.shape[2], cfg)
    phi, _ = model.forward(unary, image, fast=args.fast)
    if args.out:
        io.save_score_map(args.out, phi)
    if args.out_label:
        io.save_labels(args.out_label, np.argmin(phi, axis=2))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train = io.load_dataset(args.manifest)
    if not train:
        raise UsageError(f"{args.manifest}: no samples")
    eval_set = io.load_dataset(args.eval_manifest) if args.eval_manifest else None
    result = train_pipeline(
        train, args.arch, cfg.train_config(), eval_set=eval_set, filter_cfg=cfg.filter_config(),
        channels=cfg.channels, k1=cfg.k1, k2=cfg.k2, lam=cfg.lam, iters=cfg.iters,
        context_iters=cfg.context_iters,
    )
    save_model(args.out, result.model)
    if args.log:
        result.write_csv(args.log)
    last = result.history[-1]
    print(f"arch {args.arch}: loss {last.loss:.5f}  mean IoU {last.mean_iou:.4f}  "
          f"trimap IoU {last.trimap_iou:.4f}")
    return EXIT_OK


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size must look like 512x512, got {text!r}") from None
    if h < 1 or w < 1:
        raise UsageError("--size must be positive")
    return h, w


def _parse_radii(text: str) -> list[int]:
    try:
        radii = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--radius must be a comma-separated list of integers, got {text!r}") from None
    if not radii or min(radii) < 1:
        raise UsageError("radii must be >= 1")
    return radii


def cmd_bench(args) -> int:
    h, w = _parse_size(args.size)
    radii = _parse_radii(args.radius)
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    times = {}
    for r in radii:
        res = bm.bench_guided(h, w, r, labels=args.labels, reps=args.reps, epsilon=args.epsilon,
                              subsample=args.subsample)
        times[r] = res.seconds
        print(f"{res.label:<16} {h}x{w}  radius {r:<4} median {res.seconds * 1e3:9.3f} ms  ({args.reps} reps)")
    if len(radii) > 1:
        print(f"radius ratio (slowest/fastest): {max(times.values()) / min(times.values()):.3f}")
    if args.compare_dense:
        ch, cw = min(h, bm.DENSE_MAX_SIDE), min(w, bm.DENSE_MAX_SIDE)
        r = bm.scaled_radius(radii[0], max(h, w), max(ch, cw))
        guided = bm.bench_guided(ch, cw, r, labels=args.labels, reps=max(args.reps, 3), epsilon=args.epsilon)
        dense = bm.bench_dense(ch, cw, labels=args.labels, reps=args.reps)
        print(f"guided           {ch}x{cw}  radius {r:<4} median {guided.seconds * 1e3:9.3f} ms")
        print(f"dense            {ch}x{cw}              median {dense.seconds * 1e3:9.3f} ms")
        print(f"dense / guided speed-up: {dense.seconds / guided.seconds:.1f}x")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_checks(args.component, seed=args.seed, perturb=1e-3 if args.perturb_backward else 0.0)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  {'max error':>10}  {'tolerance':>9}  result")
    for r in results:
        print(f"{r.name:<{width}}  {r.error:10.3e}  {r.tolerance:9.0e}  {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


# -- parser ------------------------------------------------------------------

def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedcrf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="refine a unary score map")
    p.add_argument("--unary", required=True, help="unary score map (.scm)")
    p.add_argument("--image", required=True, help="guide image (PNG or PPM)")
    p.add_argument("--params", required=True, help="parameter bundle")
    p.add_argument("--out", help="refined score map (.scm)")
    p.add_argument("--out-label", help="argmax label map (.pgm)")
    p.add_argument("--fast", action="store_true", help="use the down-sampled guided filter")
    _add_config_args(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train on a dataset manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--eval-manifest", help="evaluation manifest (default: the training set)")
    p.add_argument("--arch", required=True, choices=list(ARCHS))
    p.add_argument("--out", required=True, help="output parameter bundle")
    p.add_argument("--log", help="per-epoch CSV log")
    _add_config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="time the guided-filter message pass")
    p.add_argument("--size", default="512x512", help="HxW (default 512x512)")
    p.add_argument("--radius", default="50", help="radius or comma-separated radii (default 50)")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--labels", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--subsample", type=int, default=1, help="> 1 times the fast path")
    p.add_argument("--compare-dense", action="store_true",
                   help=f"also time a brute-force dense pass (capped at {bm.DENSE_MAX_SIDE}x{bm.DENSE_MAX_SIDE})")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("check", help="oracle and gradient self-checks")
    p.add_argument("--component", default="all", choices=["all", *CHECKS])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"guidedcrf {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (UsageError, ConfigError, io.FormatError, FileNotFoundError, ValueError) as exc:
        print(f"guidedcrf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
