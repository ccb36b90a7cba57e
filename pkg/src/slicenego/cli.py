"""Command line entry point: ``slicenego run`` and ``slicenego dump-config``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from importlib.resources import files

from .harness import ExperimentConfig, ProposerConfig, check_output_dir, emit_outputs, run_experiment
from .policy import Strategy
from .proposer import ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL

ENV_HELP = f"""
remote proposer environment:
  {ENV_ENDPOINT}   HTTP endpoint receiving one POST per agent turn (required)
  {ENV_API_KEY}    bearer token sent with each request (optional)
  {ENV_MODEL}      model name placed in the request body (optional)

exit status: 0 if every requested trial completed, 1 if any aborted,
2 on configuration or output-directory errors.
"""


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="slicenego",
        description="Biased vs unbiased slice negotiation experiments.",
        epilog=ENV_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run trials and write outputs", epilog=ENV_HELP,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    run.add_argument("--config", help="YAML experiment config (defaults used when omitted)")
    run.add_argument("--scenario", choices=["golden"], help="packaged scenario instead of --config")
    run.add_argument("--strategy", choices=["biased", "unbiased", "both"])
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int, help="master seed")
    run.add_argument("--alpha", type=float, help="tail level for VaR/CVaR")
    run.add_argument("--workers", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--proposer", help="heuristic | remote | replay:<path>")
    run.add_argument("-v", "--verbose", action="store_true")

    dump = sub.add_parser("dump-config", help="print the effective config as YAML")
    dump.add_argument("--config")
    dump.add_argument("--scenario", choices=["golden"])
    return p


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "scenario", None):
        cfg = ExperimentConfig.load(files("slicenego") / "data" / "golden_scenario.yaml")
    elif args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = ExperimentConfig()
    if args.command != "run":
        return cfg
    changes = {}
    if args.strategy:
        changes["strategies"] = tuple(Strategy) if args.strategy == "both" else (Strategy(args.strategy),)
    if args.trials is not None:
        changes["n_trials"] = args.trials
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.out:
        changes["output_dir"] = args.out
    if args.proposer:
        changes["proposer"] = ProposerConfig.parse(args.proposer, cfg.proposer)
    return replace(cfg, **changes) if changes else cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "run" and cfg.proposer.backend == "remote" and not os.environ.get(ENV_ENDPOINT):
            raise ValueError(f"remote proposer needs {ENV_ENDPOINT} to be set")
    except (ValueError, TypeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "dump-config":
        sys.stdout.write(cfg.dump())
        return 0

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        check_output_dir(cfg.output_dir)
    except RuntimeError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    results = run_experiment(cfg) if cfg.strategies else []
    summary = emit_outputs(results, cfg)
    if not results:
        print("no strategies selected; wrote summary only", file=sys.stderr)
        return 1
    json.dump(summary["strategies"], sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 1 if any(r.aborted for r in results) else 0


if __name__ == "__main__":
    sys.exit(main())
