"""Command-line entry point: ``pgos <subcommand> --config c.json --seed 0 --out runs``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import pipeline
from .utils import NumericalError, PgosError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3

STAGES = ("gen-data", "train-embed", "train-policy", "synthesize", "train-detector", "evaluate",
          "run", "suite", "project")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgos", description="Policy-guided outlier synthesis for graph OOD detection.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
        p.add_argument("--config", type=Path, default=None, help="JSON config; defaults apply to missing keys")
        p.add_argument("--seed", type=int, default=None, help="overrides config seed")
        p.add_argument("--out", type=Path, default=Path("runs"), help="root directory for run folders")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path config patch, e.g. embedder.n_prototypes=8")
        if name == "suite":
            p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
            p.add_argument("--samplers", default="pgos,gaussian,none")
            p.add_argument("--k-sweep", type=_int_list, default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return _dispatch(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, PgosError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def _dispatch(args) -> int:
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ValidationError("--seed must be an unsigned 64-bit integer")
    cfg = pipeline.load_config(args.config, args.override, args.seed)
    if args.command == "suite":
        samplers = [s.strip() for s in args.samplers.split(",") if s.strip()]
        rows = pipeline.run_suite(cfg, args.seeds, samplers, args.out, args.k_sweep)
        path = args.out / f"suite-{pipeline.config_hash(cfg)}.csv"
        pipeline.write_suite_csv(rows, path)
        print(path)
        return EXIT_OK
    if args.command == "run":
        print(json.dumps(pipeline.run_pipeline(cfg, args.out), sort_keys=True))
        return EXIT_OK

    run = pipeline.Run(cfg, args.out)
    run.write_config()
    if args.command == "gen-data":
        run.make_data()
    elif args.command == "train-embed":
        run.make_embedder()
    elif args.command == "train-policy":
        run.make_policy()
    elif args.command == "synthesize":
        run.make_outliers()
    elif args.command == "train-detector":
        run.make_detector()
    elif args.command == "evaluate":
        print(json.dumps(run.evaluate(), sort_keys=True))
    elif args.command == "project":
        pipeline.project_run(run)
    print(run.dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
