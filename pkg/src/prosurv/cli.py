"""Command line interface: dataset synthesis, training, evaluation,
missing-modality sweeps, and the alignment report.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, _build, load_json, load_train_config
from .data import DataError, SurvivalDataset, load_manifest, split_folds
from .model import Scenario
from .synth import SynthConfig, generate
from .training import (
    NumericalFailure,
    alignment_report,
    cross_validate,
    evaluate_split,
    format_alignment_report,
    format_sweep_report,
    format_train_report,
    load_checkpoint,
    sweep_missing,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_SCENARIOS = {s.value: s for s in Scenario}


def _train_overrides(args) -> dict:
    return {
        "seed": args.seed,
        "manifest": args.manifest,
        "output_dir": args.out,
        "fold": args.fold,
    }


def _cmd_synth_gen(args) -> int:
    payload = load_json(args.config) if args.config else {}
    if args.seed is not None:
        payload["seed"] = args.seed
    config = _build(SynthConfig, payload, args.config or "overrides")
    result = generate(config, args.out)
    complete = sum(1 for r in result.records if r.has_pathology and r.has_genomics)
    print(f"manifest: {result.manifest_path}")
    print(f"patients: {len(result.records)} ({complete} complete)")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = load_train_config(args.config, _train_overrides(args))
    if args.all_folds:
        summary = cross_validate(config)
        per_fold = ", ".join(f"{s:.6f}" for s in summary.per_fold)
        print(f"test cindex per fold: {per_fold}")
        print(f"mean: {summary.mean:.6f}  std: {summary.std:.6f}")
        return EXIT_OK
    result = train(config)
    report = format_train_report(result)
    print(report)
    metrics_path = Path(config.output_dir) / "metrics.txt"
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    metrics_path.write_text(report + "\n")
    return EXIT_OK


def _select_split(records, train_config: dict, name: str):
    if name == "all":
        return records
    splits = split_folds(records, folds=train_config["folds"], seed=train_config["seed"])
    return getattr(splits[train_config["fold"]], name)


def _records_for(args, train_config: dict):
    manifest = args.manifest or train_config.get("manifest")
    if not manifest:
        raise ConfigError("no manifest given and none recorded in the checkpoint")
    return _select_split(load_manifest(manifest), train_config, args.split)


def _cmd_eval(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    records = _records_for(args, bundle.train_config)
    scenario = _SCENARIOS[args.scenario] if args.scenario else None
    dataset = SurvivalDataset(records, bundle.edges, bundle.normalizer)
    result = evaluate_split(bundle.model, dataset, scenario)
    print(f"split: {args.split}  scenario: {args.scenario or 'routed'}")
    print(f"cindex: {result['cindex']:.6f}  records: {int(result['count'])}")
    return EXIT_OK


def _parse_rates(text: str) -> list[float]:
    try:
        rates = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse rates {text!r}") from None
    if not rates or any(not 0.0 <= r <= 1.0 for r in rates):
        raise ConfigError(f"rates must lie in [0, 1], got {text!r}")
    return rates


def _cmd_sweep_missing(args) -> int:
    config = load_train_config(args.config, _train_overrides(args))
    points = sweep_missing(config, _parse_rates(args.rates))
    print(format_sweep_report(points))
    return EXIT_OK


def _cmd_align_report(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    records = _records_for(args, bundle.train_config)
    print(format_alignment_report(alignment_report(args.checkpoint, records)))
    return EXIT_OK


def _add_train_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of training options")
    parser.add_argument("--manifest", help="dataset manifest CSV")
    parser.add_argument("--out", help="output directory for checkpoints and reports")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--fold", type=int, help="override the configured fold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prosurv",
        description="Prototype-guided cross-modal survival prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write a synthetic dataset")
    p.add_argument("--config", help="JSON file of generator options")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.set_defaults(func=_cmd_synth_gen)

    p = sub.add_parser("train", help="train one fold")
    _add_train_options(p)
    p.add_argument("--all-folds", action="store_true", help="train every fold and summarize")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="defaults to the manifest recorded in the checkpoint")
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.add_argument("--scenario", choices=sorted(_SCENARIOS))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep-missing", help="robustness sweep over missing rates")
    _add_train_options(p)
    p.add_argument("--rates", default="0,0.25,0.5", help="comma-separated rates in [0, 1]")
    p.set_defaults(func=_cmd_sweep_missing)

    p = sub.add_parser("align-report", help="translation error: trained vs initialization")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="defaults to the manifest recorded in the checkpoint")
    p.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    p.set_defaults(func=_cmd_align_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def run() -> None:
    raise SystemExit(main(sys.argv[1:]))
