"""Command-line entry point: ``condlk <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime error, 2 bad arguments.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from ..errors import CondLKError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# flag name -> ExperimentConfig field
EXPERIMENT_FLAGS = {
    "methods": "methods", "family": "family", "swap_to": "swap_to", "descriptor": "descriptor",
    "train_sigma": "train_sigma", "test_sigma": "test_sigma", "n_train": "n_train",
    "n_layers": "n_layers", "trials": "n_trials", "seed": "seed", "image": "image",
    "template_size": "template_size", "workers": "workers", "out": "out",
}


class UsageError(Exception):
    pass


def parse_sigma_list(text: str) -> list:
    """``start:step:stop`` (stop inclusive) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad sigma range {text!r}, expected start:step:stop")
        try:
            start, step, stop = (float(v) for v in parts)
        except ValueError as exc:
            raise UsageError(f"bad sigma range {text!r}") from exc
        if step <= 0 or stop < start:
            raise UsageError(f"bad sigma range {text!r}")
        n = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad sigma list {text!r}") from exc


def parse_numbers(text: str, n: int, what: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{what} must be numbers") from exc
    if len(vals) != n:
        raise UsageError(f"{what} needs {n} numbers, got {len(vals)}")
    return np.array(vals)


def parse_gt(text: str) -> dict:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError("--gt must be numbers") from exc
    if len(vals) not in (2, 3, 4):
        raise UsageError("--gt expects cx,cy[,scale[,angle]]")
    keys = ["cx", "cy", "scale", "angle"]
    gt = {"scale": 1.0, "angle": 0.0}
    gt.update(dict(zip(keys, vals)))
    return gt


def _experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--methods")
    p.add_argument("--family")
    p.add_argument("--swap-to")
    p.add_argument("--descriptor", choices=["raw", "lbp8"])
    p.add_argument("--train-sigma", type=float)
    p.add_argument("--test-sigma")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-layers", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--image")
    p.add_argument("--gt", help="ground-truth template placement cx,cy[,scale[,angle]]")
    p.add_argument("--template-size", type=int)
    p.add_argument("--fresh-draws", action="store_true",
                   help="train later layers on fresh draws instead of propagated ones")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condlk", description="Planar alignment experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one cascade and save it as JSON")
    _experiment_args(p)
    p.add_argument("--method", required=True, choices=["iclk", "sdm", "glk", "clk"])
    p.add_argument("--model-out", required=True)

    p = sub.add_parser("align", help="align one initial box with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--init-corners", required=True, help="x1,y1,...,x4,y4 in image pixels")
    p.add_argument("--gt-corners", help="x1,y1,...,x4,y4; enables the RMSE trace")
    p.add_argument("--out")

    for name, helptext in [("eval-freq", "frequency of convergence"), ("eval-rate", "convergence rate curves"),
                           ("eval-swap", "warp-swapped CLK against native baselines")]:
        p = sub.add_parser(name, help=helptext)
        _experiment_args(p)
        if name == "eval-swap":
            p.add_argument("--swap-pairs", help="trained:tested pairs, e.g. homography:affine,affine:affine")

    p = sub.add_parser("track", help="synthetic frame-skip tracking")
    p.add_argument("--config")
    p.add_argument("--methods")
    p.add_argument("--family")
    p.add_argument("--descriptor", choices=["raw", "lbp8"])
    p.add_argument("--skips")
    p.add_argument("--n-sequences", type=int)
    p.add_argument("--n-frames", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--no-lighting", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--image")
    p.add_argument("--out")

    sub.add_parser("selftest", help="run the built-in oracle checks")
    return parser


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as f:
        d = json.load(f)
    if not isinstance(d, dict):
        raise UsageError("config file must hold a JSON object")
    return d


def experiment_config(args):
    from .experiments import ExperimentConfig

    d = _load_config(args.config)
    for flag, key in EXPERIMENT_FLAGS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag == "test_sigma":
            v = parse_sigma_list(v)
        elif flag == "methods":
            v = [m for m in v.split(",") if m]
        d[key] = v
    if getattr(args, "gt", None):
        d["gt"] = parse_gt(args.gt)
    if getattr(args, "fresh_draws", False):
        d["propagate"] = False
    if getattr(args, "swap_pairs", None):
        d["swap_pairs"] = [tuple(p.split(":")) for p in args.swap_pairs.split(",")]
    try:
        cfg = ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    from ..aligners import METHODS

    bad = [m for m in cfg.methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}")
    return cfg


def _emit(report, out):
    if out:
        report.write(out)
    else:
        sys.stdout.write(report.to_csv())


def cmd_train(args) -> int:
    from ..aligners import train_cascade
    from .experiments import prepare

    cfg = experiment_config(args)
    setup = prepare(cfg)
    cascade = train_cascade(args.method, setup.image, setup.p_gt, setup.grid, setup.train)
    cascade.save(args.model_out)
    print(f"saved {args.method} cascade with {cascade.L} layer(s) to {args.model_out}")
    return EXIT_OK


def cmd_align(args) -> int:
    from ..aligners import RegressorCascade, run_cascade
    from ..imageops import load_image
    from ..warp import fit_params_from_points

    init = parse_numbers(args.init_corners, 8, "--init-corners").reshape(4, 2)
    gt = parse_numbers(args.gt_corners, 8, "--gt-corners").reshape(4, 2) if args.gt_corners else None
    cascade = RegressorCascade.load(args.model)
    img = load_image(args.image)
    p0 = fit_params_from_points(cascade.family, cascade.grid.corners(), init)
    res = run_cascade(img, p0, cascade, gt_corners=gt)
    doc = {"family": cascade.family.value, "p_init": [float(v) for v in p0.p],
           "p_final": [float(v) for v in res.p_final.p], "iterations": res.iterations_run,
           "rmse_trace": None}
    if gt is not None:
        doc["rmse_trace"] = [None if not np.isfinite(v) else float(v) for v in res.rmse_per_iteration]
        doc["converged"] = res.converged
    text = json.dumps(doc, sort_keys=True)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .experiments import eval_frequency, eval_rate, eval_swap

    cfg = experiment_config(args)
    if args.command == "eval-freq":
        report = eval_frequency(cfg)
    elif args.command == "eval-rate":
        report = eval_rate(cfg)
    else:
        try:
            report = eval_swap(cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    for m, err in report.errors.items():
        print(f"warning: {m} failed to train: {err}", file=sys.stderr)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _emit(report, cfg.out)
    return EXIT_OK


def cmd_track(args) -> int:
    from .tracking import TrackConfig, eval_track

    d = _load_config(args.config)
    for key in ("family", "descriptor", "n_sequences", "n_frames", "n_train", "seed", "image", "out"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if args.methods:
        d["methods"] = [m for m in args.methods.split(",") if m]
    if args.skips:
        try:
            d["skips"] = [int(v) for v in args.skips.split(",")]
        except ValueError as exc:
            raise UsageError("--skips must be integers") from exc
    if args.no_lighting:
        d["lighting"] = False
    try:
        cfg = TrackConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    report = eval_track(cfg)
    for m, err in report.errors.items():
        print(f"warning: {m} failed to train: {err}", file=sys.stderr)
    if cfg.out:
        report.write(cfg.out)
    else:
        sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() else EXIT_RUNTIME


COMMANDS = {"train": cmd_train, "align": cmd_align, "eval-freq": cmd_eval, "eval-rate": cmd_eval,
            "eval-swap": cmd_eval, "track": cmd_track, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CondLKError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
