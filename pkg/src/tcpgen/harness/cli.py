"""Command-line entry points.

Subcommands mirror the pipeline stages: gen-data, build-lists, train,
decode, score, and experiment (all stages).  Every command exits 0 on
success and prints one machine-parsable `error: <stage>: <message>` line
on failure.  Artifacts live under <out>/<config-hash>/.
"""

from __future__ import annotations

import argparse
import sys

from . import experiment as ex
from .config import ConfigError, ExperimentConfig, load_config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=False, help="config file path")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default="runs", help="output root directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcpgen",
        description="contextual-biasing experiments with a tree-constrained "
                    "pointer generator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
            ("gen-data", "generate the synthetic corpus"),
            ("build-lists", "build per-utterance biasing lists"),
            ("train", "train the configured variants"),
            ("decode", "decode the test set"),
            ("score", "score n-best output"),
            ("experiment", "run every stage and the comparison table")):
        p = sub.add_parser(name, help=desc)
        _add_common(p)
    return parser


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = lambda msg: print(msg, flush=True)
    try:
        cfg = _load_cfg(args)
        paths = ex.run_paths(cfg, args.out)
        if args.command == "gen-data":
            ex.stage_data(cfg, paths, log)
        elif args.command == "build-lists":
            corpus = ex.stage_data(cfg, paths, log)
            ex.stage_lists(cfg, corpus, paths, log)
        elif args.command == "train":
            corpus = ex.stage_data(cfg, paths, log)
            ex.stage_train(cfg, corpus, paths, log)
        elif args.command == "decode":
            corpus = ex.stage_data(cfg, paths, log)
            lists = ex.load_lists(cfg, corpus, paths)
            ex.stage_decode(cfg, corpus, lists, paths, log)
        elif args.command == "score":
            corpus = ex.stage_data(cfg, paths, log)
            lists = ex.load_lists(cfg, corpus, paths)
            ex.stage_score(cfg, corpus, lists, paths, log)
        else:
            result = ex.run_experiment(cfg, args.out, log)
            with open(f"{result.run_dir}/reports/comparison.txt") as f:
                print(f.read(), end="")
        print(f"run directory: {paths.root}")
        return 0
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return 1
    except ex.StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing-input: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
