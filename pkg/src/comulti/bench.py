"""Experiment runner: config, pipeline, grids and result serialization.

The pipeline for one run is fixed: load, profile class skew, stratified
split, resample the training partition only (never the test side), fit the
selected model, predict the held-out test set, and score it.  Identical
config and seed must reproduce the structured result byte for byte, so the
canonical JSON form excludes wall-clock timings (they are reported in the
human-readable output only).
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifiers import Classifier, CombinerSpec, ForestSpec, SmoSpec, fit
from .cmc import fit_cmc
from .cmcm import fit_cmcm
from .dataset import (
    ClassStats,
    Dataset,
    FeatureSchema,
    FeatureSpec,
    NUMERIC,
    ORDINAL,
    class_stats,
    load_csv,
    load_sparse,
    split_indices,
)
from .errors import ComultiError, ConfigError, DataError
from .metrics import DEFAULT_DELTA, MetricsReport, confusion, evaluate
from .multistage import StageThresholds
from .sampling import SmoteConfig, UndersampleConfig, smote, undersample

MODELS = ("auto", "cmc", "cmcm", "baseline-rf", "baseline-smo")
SAMPLINGS = ("none", "over", "under", "over-under")

_THRESHOLD_LAYERS = ("binary", "multi", "b", "m1", "m2", "m3")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs; every field has a config-file key and a
    CLI flag, with flags winning."""

    dataset_path: str
    dataset_format: str = "csv"  # csv | sparse
    label_column: str = "label"
    labels_path: Optional[str] = None
    schema_path: Optional[str] = None
    model: str = "auto"
    sampling: str = "none"
    split_fraction: float = 0.8
    seed: int = 0
    seeds: int = 1
    majority_override: Optional[tuple[str, ...]] = None
    thresholds: dict = field(default_factory=dict)  # layer -> tuple of floats
    delta: float = DEFAULT_DELTA
    per_factor_delta: bool = False
    smote_k: int = 5
    smote_rate: float = 1.0
    undersample_fraction: float = 0.9
    trees: int = 100
    degree: int = 1
    c: float = 1.0
    tol: float = 1e-3
    max_iter: int = 200_000
    name: Optional[str] = None

    def __post_init__(self):
        if self.dataset_format not in ("csv", "sparse"):
            raise ConfigError(f"unknown dataset format {self.dataset_format!r}")
        if self.dataset_format == "sparse" and not self.labels_path:
            raise ConfigError("sparse datasets need a labels file")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r} (one of {MODELS})")
        if self.sampling not in SAMPLINGS:
            raise ConfigError(
                f"unknown sampling {self.sampling!r} (one of {SAMPLINGS})"
            )
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"split must be in (0,1), got {self.split_fraction}")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.delta <= 0:
            raise ConfigError("delta must be > 0")
        for layer in self.thresholds:
            if layer not in _THRESHOLD_LAYERS:
                raise ConfigError(f"unknown threshold layer {layer!r}")

    @property
    def display_name(self) -> str:
        if self.name:
            return self.name
        tag = {"none": "", "over": " (O.)", "under": " (U.)",
               "over-under": " (O.U.)"}[self.sampling]
        return f"{self.model}{tag}"

    def to_dict(self) -> dict:
        doc = {
            "dataset_path": self.dataset_path,
            "dataset_format": self.dataset_format,
            "label_column": self.label_column,
            "labels_path": self.labels_path,
            "schema_path": self.schema_path,
            "model": self.model,
            "sampling": self.sampling,
            "split_fraction": self.split_fraction,
            "seed": self.seed,
            "seeds": self.seeds,
            "majority_override": list(self.majority_override)
            if self.majority_override else None,
            "thresholds": {k: list(v) for k, v in sorted(self.thresholds.items())},
            "delta": self.delta,
            "per_factor_delta": self.per_factor_delta,
            "smote_k": self.smote_k,
            "smote_rate": self.smote_rate,
            "undersample_fraction": self.undersample_fraction,
            "trees": self.trees,
            "degree": self.degree,
            "c": self.c,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "name": self.name,
        }
        return doc


# ---------------------------------------------------------------------------
# Config file parsing: flat `key = value` lines with dotted sections.

_KEY_ALIASES = {
    "dataset.path": "dataset_path",
    "dataset.format": "dataset_format",
    "dataset.label_column": "label_column",
    "dataset.labels_path": "labels_path",
    "dataset.schema": "schema_path",
    "model": "model",
    "sampling": "sampling",
    "split": "split_fraction",
    "seed": "seed",
    "seeds": "seeds",
    "majority": "majority_override",
    "delta": "delta",
    "delta_per_factor": "per_factor_delta",
    "smote.k_neighbors": "smote_k",
    "smote.rate": "smote_rate",
    "undersample.fraction": "undersample_fraction",
    "forest.trees": "trees",
    "smo.degree": "degree",
    "smo.c": "c",
    "smo.tol": "tol",
    "smo.max_iter": "max_iter",
    "name": "name",
}

_INT_FIELDS = {"seed", "seeds", "smote_k", "trees", "degree", "max_iter"}
_FLOAT_FIELDS = {"split_fraction", "delta", "smote_rate",
                 "undersample_fraction", "c", "tol"}
_BOOL_FIELDS = {"per_factor_delta"}


def _parse_value(field_name: str, raw: str):
    raw = raw.strip()
    try:
        if field_name in _INT_FIELDS:
            return int(raw)
        if field_name in _FLOAT_FIELDS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad numeric value {raw!r} for {field_name}") from None
    if field_name in _BOOL_FIELDS:
        if raw.lower() in ("true", "yes", "1"):
            return True
        if raw.lower() in ("false", "no", "0"):
            return False
        raise ConfigError(f"bad boolean {raw!r} for {field_name}")
    if field_name == "majority_override":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    return raw


def parse_config_text(text: str, base: Optional[dict] = None) -> dict:
    """Parse `key = value` lines into ExperimentConfig keyword arguments."""
    kwargs = dict(base or {})
    thresholds = dict(kwargs.get("thresholds") or {})
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key.startswith("thresholds."):
            layer = key.split(".", 1)[1]
            try:
                thresholds[layer] = tuple(float(v) for v in raw.split(","))
            except ValueError:
                raise ConfigError(f"line {lineno}: bad threshold list") from None
            continue
        if key not in _KEY_ALIASES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        field_name = _KEY_ALIASES[key]
        kwargs[field_name] = _parse_value(field_name, raw)
    if thresholds:
        kwargs["thresholds"] = thresholds
    return kwargs


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read a config file, apply overrides (CLI flags win), build the config."""
    kwargs = parse_config_text(Path(path).read_text(encoding="utf-8"))
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if "dataset_path" not in kwargs:
        raise ConfigError(f"{path}: dataset.path is required")
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# Schema loading / inference


def load_schema_json(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    feats = []
    for item in doc:
        kind = item.get("kind", NUMERIC)
        cats = tuple(item["categories"]) if kind == ORDINAL else None
        feats.append(FeatureSpec(item["name"], kind, cats))
    return FeatureSchema(tuple(feats))


def infer_csv_schema(path, label_column: str) -> FeatureSchema:
    """Columns where every value parses as a number are numeric; the rest are
    ordinal-nominal with categories in first-appearance order."""
    import csv as _csv

    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(str(exc)) from None
    with fh:
        reader = _csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if label_column not in header:
            raise DataError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        feat_idx = [i for i in range(len(header)) if i != label_idx]
        numeric = {i: True for i in feat_idx}
        cats: dict[int, list[str]] = {i: [] for i in feat_idx}
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            for i in feat_idx:
                val = row[i].strip()
                if numeric[i]:
                    try:
                        float(val)
                    except ValueError:
                        numeric[i] = False
                if val not in cats[i]:
                    cats[i].append(val)
    feats = []
    for i in feat_idx:
        if numeric[i]:
            feats.append(FeatureSpec(header[i], NUMERIC))
        else:
            if len(cats[i]) < 2:
                raise DataError(
                    f"{path}: column {header[i]!r} has a single category"
                )
            feats.append(FeatureSpec(header[i], ORDINAL, tuple(cats[i])))
    return FeatureSchema(tuple(feats))


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_format == "sparse":
        return load_sparse(cfg.dataset_path, cfg.labels_path)
    if cfg.schema_path:
        schema = load_schema_json(cfg.schema_path)
    else:
        schema = infer_csv_schema(cfg.dataset_path, cfg.label_column)
    return load_csv(cfg.dataset_path, cfg.label_column, schema)


# ---------------------------------------------------------------------------
# Running


def auto_select(stats: ClassStats) -> str:
    """Pick the model for a skew profile: one majority class means the
    single-skew model, several mean the multi-skew model."""
    n_major = len(stats.majority)
    if n_major == 0:
        raise DataError(
            "no class exceeds the balance point; the dataset is not skewed "
            "and neither co-multistage topology applies"
        )
    return "cmc" if n_major == 1 else "cmcm"


@dataclass(frozen=True)
class RunResult:
    """One experiment's outcome; canonical JSON excludes the wall clock."""

    config: dict
    resolved_model: str
    report: MetricsReport
    n_train: int
    n_train_sampled: int
    n_test: int
    test_indices: tuple[int, ...]
    routing: dict
    duration_s: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "resolved_model": self.resolved_model,
            "metrics": self.report.to_dict(),
            "n_train": self.n_train,
            "n_train_sampled": self.n_train_sampled,
            "n_test": self.n_test,
            "test_indices": list(self.test_indices),
            "routing": self.routing,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def _stage_thresholds(cfg: ExperimentConfig, layer: str,
                      n_stages: int) -> StageThresholds:
    values = cfg.thresholds.get(layer)
    if values is None:
        return StageThresholds.ones(n_stages)
    return StageThresholds(tuple(values))


def _specs(cfg: ExperimentConfig):
    return [
        ForestSpec(trees=cfg.trees),
        SmoSpec(degree=cfg.degree, c=cfg.c, tol=cfg.tol, max_iter=cfg.max_iter),
        CombinerSpec(left=0, right=1),
    ]


class _Stage:
    """Context tag so failures surface with the pipeline stage identity."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, ComultiError):
            exc.args = (f"[{self.name}] {exc}",)
        return False


def run_experiment(cfg: ExperimentConfig, ds: Optional[Dataset] = None,
                   seed: Optional[int] = None) -> RunResult:
    """Run the full pipeline once.  ``ds`` may be passed to skip reloading
    (multi-seed runs); ``seed`` overrides ``cfg.seed`` for the same reason."""
    t0 = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    with _Stage("load"):
        if ds is None:
            ds = load_dataset(cfg)
    with _Stage("stats"):
        stats = class_stats(ds, cfg.majority_override)
    with _Stage("split"):
        train_idx, test_idx = split_indices(ds, cfg.split_fraction, seed)
        ds_train = ds.take(train_idx)
        ds_test = ds.take(test_idx)
    with _Stage("sampling"):
        sample_seeds = np.random.SeedSequence(seed).spawn(3)
        n_train_raw = ds_train.n_instances
        if cfg.sampling in ("over", "over-under"):
            ds_train = smote(ds_train, stats, SmoteConfig(
                k_neighbors=cfg.smote_k, rate=cfg.smote_rate,
                seed=int(sample_seeds[0].generate_state(1)[0])))
        if cfg.sampling in ("under", "over-under"):
            ds_train = undersample(ds_train, stats, UndersampleConfig(
                target_fraction=cfg.undersample_fraction,
                seed=int(sample_seeds[1].generate_state(1)[0])))
    fit_seed = int(sample_seeds[2].generate_state(1)[0])
    with _Stage("fit"):
        model_kind = cfg.model
        if model_kind == "auto":
            model_kind = auto_select(stats)
        specs = _specs(cfg)
        if model_kind == "cmc":
            model = fit_cmc(
                ds_train, stats,
                _stage_thresholds(cfg, "binary", len(specs)),
                _stage_thresholds(cfg, "multi", len(specs)),
                seed=fit_seed, specs=specs)
        elif model_kind == "cmcm":
            layer_thresholds = [
                _stage_thresholds(cfg, layer, len(specs))
                for layer in ("b", "m1", "m2", "m3")
            ]
            model = fit_cmcm(ds_train, stats, layer_thresholds,
                             seed=fit_seed, specs=specs)
        elif model_kind == "baseline-rf":
            model = fit(specs[0], ds_train, fit_seed)
        else:  # baseline-smo
            model = fit(specs[1], ds_train, fit_seed)
    with _Stage("predict"):
        if isinstance(model, Classifier):
            labels = model.predict_batch(ds_test.x)
            routing = {}
        else:
            labels, routing = model.predict_batch(ds_test.x)
    with _Stage("metrics"):
        cm = confusion(ds_test.y, labels, ds.n_classes, ds.labels)
        report = evaluate(cm, cfg.delta, cfg.per_factor_delta)
    return RunResult(
        config=cfg.to_dict(),
        resolved_model=model_kind,
        report=report,
        n_train=n_train_raw,
        n_train_sampled=ds_train.n_instances,
        n_test=ds_test.n_instances,
        test_indices=tuple(int(i) for i in test_idx),
        routing=routing,
        duration_s=time.perf_counter() - t0,
        seed=seed,
    )


@dataclass(frozen=True)
class MultiSeedResult:
    """Mean and spread over consecutive seeds for one config."""

    config: dict
    runs: tuple[RunResult, ...]

    def metric_values(self, key: str) -> np.ndarray:
        return np.array([getattr(r.report, key) for r in self.runs])

    def summary(self) -> dict:
        out = {}
        for key in ("macro_f1", "g_mean", "sg_mean"):
            vals = self.metric_values(key)
            out[key] = {"mean": float(vals.mean()),
                        "std": float(vals.std(ddof=0))}
        zr = np.array([r.report.zero_recall_count for r in self.runs])
        out["zero_recall_count"] = {"mean": float(zr.mean()),
                                    "std": float(zr.std(ddof=0))}
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "summary": self.summary(),
            "runs": [r.to_dict() for r in self.runs],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def run_many(cfg: ExperimentConfig) -> MultiSeedResult:
    """Run ``cfg.seeds`` consecutive seeds starting at ``cfg.seed``."""
    ds = load_dataset(cfg)
    runs = tuple(
        run_experiment(cfg, ds=ds, seed=cfg.seed + off)
        for off in range(cfg.seeds)
    )
    return MultiSeedResult(cfg.to_dict(), runs)


# ---------------------------------------------------------------------------
# Grids

_GRID_ROWS = ("Macro-F1", "G-Mean", "SG-Mean", "# R_i=0")


def _cell_from_result(result) -> dict:
    if isinstance(result, MultiSeedResult):
        s = result.summary()
        return {
            "Macro-F1": f"{s['macro_f1']['mean']:.3f}±{s['macro_f1']['std']:.3f}",
            "G-Mean": f"{s['g_mean']['mean']:.3f}±{s['g_mean']['std']:.3f}",
            "SG-Mean": f"{s['sg_mean']['mean']:.3f}±{s['sg_mean']['std']:.3f}",
            "# R_i=0": f"{s['zero_recall_count']['mean']:.1f}",
        }
    rep = result.report
    return {
        "Macro-F1": f"{rep.macro_f1:.3f}",
        "G-Mean": f"{rep.g_mean:.3f}",
        "SG-Mean": f"{rep.sg_mean:.3f}",
        "# R_i=0": str(rep.zero_recall_count),
    }


@dataclass(frozen=True)
class GridResult:
    columns: tuple[str, ...]
    cells: tuple[dict, ...]          # per column: row name -> display string
    results: tuple[object, ...]      # RunResult | MultiSeedResult | None
    errors: tuple[Optional[str], ...]

    def to_text(self) -> str:
        names = ("Measure",) + self.columns
        widths = [len(n) for n in names]
        lines = []
        rows = []
        for row_name in _GRID_ROWS:
            row = [row_name]
            for j, cell in enumerate(self.cells):
                row.append(cell.get(row_name, "-"))
                widths[j + 1] = max(widths[j + 1], len(row[-1]))
            rows.append(row)
        widths[0] = max(widths[0], max(len(r) for r in _GRID_ROWS))
        header = "  ".join(n.ljust(w) for n, w in zip(names, widths))
        lines.append(header)
        lines.append("-" * len(header))
        for row in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        columns = []
        for name, result, err in zip(self.columns, self.results, self.errors):
            if err is not None:
                columns.append({"name": name, "error": err})
            else:
                columns.append({"name": name, "result": result.to_dict()})
        return {"columns": columns}

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def run_grid(cfgs: Sequence[ExperimentConfig], workers: int = 1) -> GridResult:
    """Run several configs as table columns; a failing cell becomes an error
    marker and the rest of the grid still completes."""
    if not cfgs:
        raise ConfigError("a grid needs at least one config")

    def one(cfg: ExperimentConfig):
        try:
            result = run_many(cfg) if cfg.seeds > 1 else run_experiment(cfg)
            return result, None
        except (ComultiError, OSError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, cfgs))
    else:
        outcomes = [one(cfg) for cfg in cfgs]

    columns, cells, results, errors = [], [], [], []
    for cfg, (result, err) in zip(cfgs, outcomes):
        columns.append(cfg.display_name)
        results.append(result)
        errors.append(err)
        cells.append(_cell_from_result(result) if err is None else
                     {row: "ERR" for row in _GRID_ROWS})
    return GridResult(tuple(columns), tuple(cells), tuple(results),
                      tuple(errors))
