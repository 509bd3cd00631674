"""Command-line harness.

Subcommands: ``run`` (one experiment), ``grid`` (several configs as table
columns), ``profile`` (class-skew report) and ``convert`` (csv <-> sparse).
Exit codes: 0 success, 1 config error, 2 data error, 3 training error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (
    ExperimentConfig,
    load_config,
    load_dataset,
    run_experiment,
    run_grid,
    run_many,
)
from .dataset import class_stats, write_csv, write_sparse
from .errors import ComultiError, ConfigError, DataError, TrainingError

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def _add_dataset_flags(p: argparse.ArgumentParser):
    p.add_argument("--dataset", help="dataset path (csv, or sparse matrix file)")
    p.add_argument("--format", choices=("csv", "sparse"), dest="format_")
    p.add_argument("--label-column", help="label column name for csv datasets")
    p.add_argument("--labels", help="labels file for sparse datasets")
    p.add_argument("--schema", help="JSON feature schema for csv datasets")


def _add_run_flags(p: argparse.ArgumentParser):
    _add_dataset_flags(p)
    p.add_argument("--model",
                   choices=("auto", "cmc", "cmcm", "baseline-rf", "baseline-smo"))
    p.add_argument("--sampling", choices=("none", "over", "under", "over-under"))
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, metavar="N",
                   help="run N consecutive seeds and report mean±std")
    p.add_argument("--split", type=float, help="train fraction (default 0.8)")
    p.add_argument("--majority", metavar="k1,k2,...",
                   help="majority-class override (label names)")
    p.add_argument("--delta", type=float, help="smoothing for SG-Mean")
    p.add_argument("--out", help="write output to this file")
    p.add_argument("--json", action="store_true", help="structured JSON output")


def _overrides(args) -> dict:
    majority = None
    if args.majority is not None:
        majority = tuple(v.strip() for v in args.majority.split(",") if v.strip())
    return {
        "dataset_path": args.dataset,
        "dataset_format": args.format_,
        "label_column": args.label_column,
        "labels_path": args.labels,
        "schema_path": args.schema,
        "model": args.model,
        "sampling": args.sampling,
        "seed": args.seed,
        "seeds": args.seeds,
        "split_fraction": args.split,
        "majority_override": majority,
        "delta": args.delta,
    }


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        return load_config(args.config, _overrides(args))
    over = {k: v for k, v in _overrides(args).items() if v is not None}
    if "dataset_path" not in over:
        raise ConfigError("--dataset (or a config file) is required")
    return ExperimentConfig(**over)


def _emit(text: str, out_path):
    if out_path:
        Path(out_path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    if cfg.seeds > 1:
        result = run_many(cfg)
        if args.json:
            _emit(result.to_json(), args.out)
        else:
            lines = [f"dataset: {cfg.dataset_path}   model: {cfg.model}   "
                     f"sampling: {cfg.sampling}   seeds: {cfg.seeds}"]
            for key, s in result.summary().items():
                lines.append(f"{key:>18}  {s['mean']:.3f} ± {s['std']:.3f}")
            _emit("\n".join(lines), args.out)
    else:
        result = run_experiment(cfg)
        if args.json:
            _emit(result.to_json(), args.out)
        else:
            lines = [
                f"dataset: {cfg.dataset_path}   model: {result.resolved_model}"
                f"   sampling: {cfg.sampling}   seed: {result.seed}",
                f"train/test: {result.n_train_sampled} (from {result.n_train})"
                f" / {result.n_test}   {result.duration_s:.2f}s",
                result.report.to_text(),
            ]
            if result.routing:
                lines.append(f"routing: {result.routing}")
            _emit("\n".join(lines), args.out)
    return 0


def _cmd_grid(args) -> int:
    from dataclasses import replace

    cfgs = []
    for path in args.configs:
        cfg = load_config(path)
        if cfg.name is None:
            cfg = replace(cfg, name=f"{Path(path).stem} {cfg.display_name}")
        cfgs.append(cfg)
    grid = run_grid(cfgs, workers=args.workers)
    _emit(grid.to_json() if args.json else grid.to_text(), args.out)
    return 0


def _cmd_profile(args) -> int:
    cfg_kwargs = {"dataset_path": args.dataset, "label_column": "label"}
    if args.format_:
        cfg_kwargs["dataset_format"] = args.format_
    if args.label_column:
        cfg_kwargs["label_column"] = args.label_column
    if args.labels:
        cfg_kwargs["labels_path"] = args.labels
    if args.schema:
        cfg_kwargs["schema_path"] = args.schema
    if args.dataset is None:
        raise ConfigError("--dataset is required")
    cfg = ExperimentConfig(**cfg_kwargs)
    ds = load_dataset(cfg)
    majority = None
    if args.majority:
        majority = tuple(v.strip() for v in args.majority.split(",") if v.strip())
    stats = class_stats(ds, majority)
    _emit(stats.describe(), args.out)
    return 0


def _cmd_convert(args) -> int:
    if args.dataset is None:
        raise ConfigError("--dataset is required")
    cfg_kwargs = {
        "dataset_path": args.dataset,
        "dataset_format": args.format_ or "csv",
        "label_column": args.label_column or "label",
    }
    if args.labels:
        cfg_kwargs["labels_path"] = args.labels
    if args.schema:
        cfg_kwargs["schema_path"] = args.schema
    ds = load_dataset(ExperimentConfig(**cfg_kwargs))
    if args.to == "csv":
        write_csv(ds, args.out, label_column=args.label_column or "label")
    else:
        out = Path(args.out)
        labels_out = args.labels_out or str(out) + ".labels"
        write_sparse(ds, out, labels_out)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="comulti",
                     description="co-multistage imbalanced-multiclass benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", help="config file (flat key = value lines)")
    _add_run_flags(p_run)

    p_grid = sub.add_parser("grid", help="run a grid of config files")
    p_grid.add_argument("configs", nargs="+", help="one config file per column")
    p_grid.add_argument("--workers", type=int, default=1)
    p_grid.add_argument("--out")
    p_grid.add_argument("--json", action="store_true")

    p_prof = sub.add_parser("profile", help="print class statistics")
    _add_dataset_flags(p_prof)
    p_prof.add_argument("--majority", metavar="k1,k2,...")
    p_prof.add_argument("--out")

    p_conv = sub.add_parser("convert", help="convert csv <-> sparse")
    _add_dataset_flags(p_conv)
    p_conv.add_argument("--to", choices=("csv", "sparse"), required=True)
    p_conv.add_argument("--out", required=True)
    p_conv.add_argument("--labels-out",
                        help="labels file when writing sparse (default "
                             "<out>.labels)")
    return parser


_COMMANDS = {
    "run": _cmd_run,
    "grid": _cmd_grid,
    "profile": _cmd_profile,
    "convert": _cmd_convert,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ComultiError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
