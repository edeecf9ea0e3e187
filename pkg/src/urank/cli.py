"""Command-line entry point: ``urank <subcommand>``.

Exit status: 0 success, 1 usage or config error, 2 stage failure (including
missing upstream artifacts).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bounds import verify_bounds
from .config import ConfigError, load_config
from .matching import km_match
from .pipeline import Pipeline, StageError, evaluate_checkpoints, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="YAML experiment config (defaults if omitted)")
    p.add_argument("--output-dir", "-o",
                   help="output directory (overrides config and $URANK_OUTPUT_DIR)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="urank", description="Utility-maximizing learning-to-rank experiments.")
    parser.add_argument("--print-config", action="store_true",
                        help="print the effective config (defaults merged with --config) as YAML")
    parser.add_argument("--config", "-c", dest="root_config", help=argparse.SUPPRESS)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="run all stages, skipping those already up to date")
    _add_config_args(p)
    p.add_argument("--force", action="store_true", help="rerun every stage")

    p = sub.add_parser("simulate", help="build the dataset split and simulate click logs")
    _add_config_args(p)
    p = sub.add_parser("train-ctr", help="fit the position-aware click models")
    _add_config_args(p)
    p = sub.add_parser("train-ranker", help="train U-rank and the click-trained baselines")
    _add_config_args(p)
    p.add_argument("--method", action="append",
                   help="train only this method (repeatable), e.g. u_rank, naive_lambdarank")

    p = sub.add_parser("evaluate", help="oracle evaluation of all methods or given checkpoints")
    _add_config_args(p)
    p.add_argument("--ranker", action="append", metavar="CHECKPOINT",
                   help="compare these ranker checkpoints instead (first one is the t-test reference)")
    p.add_argument("--out", help="where to write the checkpoint comparison JSON")

    p = sub.add_parser("verify-bounds", help="check the regret bound chain on saved snapshots")
    p.add_argument("snapshots", nargs="?",
                   help="snapshot JSON (one snapshot, a list, or a bound_snapshots artifact); "
                        "without it, the pipeline's own snapshots are checked")
    _add_config_args(p)
    p.add_argument("--tol", type=float, default=1e-9)

    p = sub.add_parser("match", help="maximum-weight item/position assignment of a CSV matrix")
    p.add_argument("matrix", help="CSV of weights, one row per item, one column per position")
    p.add_argument("--json", action="store_true", help="print JSON instead of a listing")
    return parser


def _read_matrix(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise io.ArtifactError(f"missing matrix file: {p}")
    with open(p, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise io.ArtifactError(f"{p}: not a numeric matrix ({exc})") from exc


def cmd_match(args) -> int:
    w = _read_matrix(args.matrix)
    if w.ndim != 2 or w.size == 0:
        raise io.ArtifactError(f"{args.matrix}: expected a non-empty rectangular matrix")
    res = km_match(w)
    if args.json:
        print(json.dumps({"assignment": {str(i): k for i, k in sorted(res.assignment.items())},
                          "unplaced": res.unplaced, "total_weight": res.total_weight}))
        return EXIT_OK
    for item, pos in sorted(res.assignment.items(), key=lambda t: t[1]):
        print(f"position {pos}: item {item} (weight {float(w[item, pos - 1])!r})")
    for item in res.unplaced:
        print(f"unplaced: item {item}")
    print(f"total {float(res.total_weight)!r}")
    return EXIT_OK


def _load_snapshots(path: str) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise io.ArtifactError(f"missing snapshot file: {p}")
    doc = json.loads(p.read_text())
    if isinstance(doc, list):
        return doc
    return doc["snapshots"] if "snapshots" in doc else [doc]


def cmd_verify_bounds(args, pipe: Pipeline | None) -> int:
    if args.snapshots:
        report = verify_bounds(_load_snapshots(args.snapshots), tol=args.tol).to_dict()
    else:
        pipe.run_stage("verify-bounds")
        report = io.read_json(pipe.path("bounds.json"))
    print(json.dumps(io.jsonable(report), indent=1))
    return EXIT_OK if report["ok"] else EXIT_STAGE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.command == "match":
            return cmd_match(args)
        cfg_path = getattr(args, "config", None) or args.root_config
        config = load_config(cfg_path, getattr(args, "output_dir", None))
        if args.print_config:
            print(config.to_yaml(), end="")
            return EXIT_OK
        if args.command is None:
            raise UsageError("urank: a subcommand is required (or --print-config)")
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (io.ArtifactError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE

    pipe = Pipeline(config)
    try:
        if args.command == "run":
            run_pipeline(config, force=args.force)
            print(pipe.path("report.json"))
        elif args.command == "simulate":
            pipe.run_stage("data")
            pipe.run_stage("simulate")
        elif args.command == "train-ctr":
            pipe.run_stage("train-ctr")
        elif args.command == "train-ranker":
            pipe.run_stage("train-ranker", methods=args.method)
        elif args.command == "evaluate":
            if args.ranker:
                doc = evaluate_checkpoints(pipe, args.ranker, Path(args.out) if args.out else None)
                print(json.dumps(io.jsonable(doc), indent=1))
            else:
                pipe.run_stage("evaluate")
                print(pipe.path("report.json"))
        elif args.command == "verify-bounds":
            return cmd_verify_bounds(args, pipe)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (io.ArtifactError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
