"""
Command-line entry point.

    dkldiag fit-exact --config toy.json --out runs/toy-se
    dkldiag fit-svgp --kind svdkl --batch-size 64 --seeds 0,1,2,3,4 --out runs/svdkl
    dkldiag sample-hmc --config hmc.json --out runs/hmc
    dkldiag diagnose-corr --out runs/corr
    dkldiag eval runs/toy-se/predictions.csv
"""

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .harness import (
    ConfigError,
    DatasetError,
    ExperimentConfig,
    ExperimentError,
    MetricsError,
    apply_overrides,
    compare_minibatch_regularization,
    diagnose_correlation,
    evaluate_predictions,
    load_config,
    run_experiment,
    run_seed_sweep,
)

logger = logging.getLogger(__name__)

__all__ = ["build_parser", "main"]

# subcommand -> (default kind, kinds it accepts)
FAMILIES: Dict[str, Tuple[str, Tuple[str, ...]]] = {
    "fit-exact": ("exact-se", ("exact-se", "exact-dkl", "exact-fdkl")),
    "fit-svgp": ("svdkl", ("svgp", "vdkl", "svdkl", "fsvdkl")),
    "fit-nn": ("nn", ("nn",)),
    "sample-hmc": ("hmc-dkl", ("hmc-dkl",)),
    "sample-sgld": ("sgld-svdkl", ("sgld-svdkl",)),
}


def _seed_list(text: str) -> List[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected comma-separated integers, got {text!r}")
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError(f"Expected non-negative seeds, got {text!r}")
    return seeds


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="run seed (unsigned 64-bit)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--freeze-net", action="store_true", help="keep the feature extractor fixed")
    parser.add_argument("--batch-size", type=int, help="minibatch size")
    parser.add_argument("--log-level", default="INFO", help="logging level (DEBUG, INFO, WARNING, ...)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dkldiag", description="Deep kernel GPs and marginal-likelihood overfitting diagnostics"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for command, (default, kinds) in FAMILIES.items():
        p = sub.add_parser(command, help=f"train {' / '.join(kinds)}")
        _add_common(p)
        if len(kinds) > 1:
            p.add_argument("--kind", choices=kinds, help=f"model kind (default: config or {default})")
        p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds for a concurrent sweep")
        p.add_argument("--timeout", type=float, help="per-seed timeout in seconds (sweeps)")

    p = sub.add_parser("diagnose-corr", help="compare prior correlations of SE and deep-kernel fits")
    _add_common(p)

    p = sub.add_parser("compare-minibatch", help="full-batch versus minibatch training comparison")
    _add_common(p)
    p.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4], help="comma-separated seeds")
    p.add_argument("--timeout", type=float, help="per-seed timeout in seconds")

    p = sub.add_parser("eval", help="recompute metrics from a predictions.csv")
    p.add_argument("path", type=Path, help="predictions.csv or a run directory containing it")
    p.add_argument("--log-level", default="INFO", help="logging level")
    return parser


def _experiment_config(args: argparse.Namespace, kind: Optional[str] = None) -> ExperimentConfig:
    config = load_config(args.config) if args.config is not None else ExperimentConfig()
    if args.command in FAMILIES:
        default, kinds = FAMILIES[args.command]
        chosen = getattr(args, "kind", None)
        if chosen is None:
            chosen = config.model_kind if "model_kind" in config.model_fields_set else default
        if chosen not in kinds:
            raise ConfigError(f"{args.command} runs {', '.join(kinds)}; the config asks for {chosen}")
        kind = chosen
    return apply_overrides(
        config,
        model_kind=kind,
        seed=args.seed,
        batch_size=args.batch_size,
        freeze_net=True if args.freeze_net else None,
        out_dir=None if args.out is None else str(args.out),
    )


def _print_json(payload: str) -> None:
    sys.stdout.write(payload.rstrip("\n") + "\n")


def _run(args: argparse.Namespace) -> int:
    if args.command == "eval":
        path = args.path / "predictions.csv" if args.path.is_dir() else args.path
        _print_json(json.dumps(evaluate_predictions(path), indent=2))
        return 0

    config = _experiment_config(args, kind=None if args.command in FAMILIES else "exact-dkl")
    if args.command == "diagnose-corr":
        _print_json(diagnose_correlation(config).model_dump_json(indent=2))
        return 0
    if args.command == "compare-minibatch":
        outcome = asyncio.run(
            compare_minibatch_regularization(config, args.seeds, config.out_dir, timeout=args.timeout)
        )
        _print_json(outcome.model_dump_json(indent=2))
        return 0

    if args.seeds:
        sweep = asyncio.run(run_seed_sweep(config, args.seeds, config.out_dir, timeout=args.timeout))
        summary = {
            "model_kind": config.model_kind,
            "reports": {str(seed): r.report.model_dump(mode="json") for seed, r in sweep.results.items()},
            "failures": {str(seed): msg for seed, msg in sweep.failures.items()},
        }
        _print_json(json.dumps(summary, indent=2))
        return 0 if sweep.results else 1

    result = run_experiment(config)
    _print_json(result.report.model_dump_json(indent=2))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _run(args)
    except (ConfigError, DatasetError, ExperimentError, MetricsError) as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
