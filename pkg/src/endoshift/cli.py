"""Command line entry point: ``endoshift run|evaluate|sweep``.

Exit codes: 0 ok, 2 config error, 3 runtime error.  ``ENDOSHIFT_OUT``
overrides the output directory from the config.
"""
from __future__ import annotations

import argparse
import os
import sys

from .config import METHODS, ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _out_dir(cfg) -> str:
    return os.environ.get("ENDOSHIFT_OUT") or cfg.output_dir


def _load(path, method=None):
    try:
        cfg = load_config(path)
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    if method is not None:
        cfg = cfg.with_overrides(method=method)
    return cfg


def cmd_run(args) -> int:
    from .campaign import plan_summary, run_campaign

    cfg = _load(args.config, args.method)
    out = _out_dir(cfg)
    if args.dry_run:
        print(plan_summary(cfg, out))
        return EXIT_OK
    run_campaign(cfg, out, threads=args.threads)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .campaign import evaluate_run

    evaluate_run(args.run, args.seed, threads=args.threads)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .campaign import run_sweep

    cfg = _load(args.config)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError([f"--values: {exc}"]) from exc
    if not values:
        raise ConfigError(["--values: empty list"])
    if args.param != "gamma":
        raise ConfigError([f"--param: unsupported parameter {args.param!r}"])
    run_sweep(cfg, args.param, values, _out_dir(cfg), threads=args.threads)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="endoshift")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a campaign from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--method", choices=("all", *METHODS))
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--dry-run", action="store_true")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("evaluate", help="re-evaluate stored thresholds on a new test seed")
    ev.add_argument("--run", required=True)
    ev.add_argument("--seed", type=int, required=True)
    ev.add_argument("--threads", type=int, default=1)
    ev.set_defaults(func=cmd_evaluate)

    sw = sub.add_parser("sweep", help="one campaign per parameter value")
    sw.add_argument("--config", required=True)
    sw.add_argument("--param", default="gamma")
    sw.add_argument("--values", required=True)
    sw.add_argument("--threads", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        for line in exc.problems:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
