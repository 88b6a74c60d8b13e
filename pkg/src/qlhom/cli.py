"""Command-line entry point: ``qlhom {upscale,convergence,validate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from .experiments import (ConfigError, ExperimentConfig, run_convergence, run_upscale,
                          validate_models, write_outputs)
from .upscaling import ModelInvalidError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MODEL_INVALID = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qlhom", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("upscale", "averaged effective tensors and estimators"),
                        ("convergence", "error table against fine reference solutions")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
        s.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
        s.add_argument("--seed", type=int, help="override master_seed")
        s.add_argument("--output", metavar="DIR", help="override output_dir")
    v = sub.add_parser("validate", help="run the toy-scale oracle suite")
    v.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.output:
        changes["output_dir"] = args.output
    return replace(cfg, **changes) if changes else cfg


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    if args.command == "validate":
        from .validation import run_checks
        results = run_checks(corrupt=args.corrupt)
        return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED

    try:
        cfg = load_config(args)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"qlhom: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if args.command == "upscale":
            results, timings = run_upscale(cfg, args.threads)
            out = write_outputs(results, timings, cfg, "upscale")
            problems = validate_models(results)
            if problems:
                raise ModelInvalidError("; ".join(problems))
        else:
            results, timings = run_convergence(cfg, args.threads)
            out = write_outputs(results, timings, cfg, "convergence")
    except ModelInvalidError as exc:
        print(f"qlhom: model invalid: {exc}", file=sys.stderr)
        return EXIT_MODEL_INVALID
    print(f"wrote {out / 'results.csv'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
