"""Probabilistic base classifiers used as multistage stages."""

from __future__ import annotations

import json

import numpy as np

from ..dataset import Dataset
from ..errors import DataError, TrainingError
from .base import (
    ClassifierSpec,
    Classifier,
    CombinerSpec,
    ForestSpec,
    ProbDist,
    SmoSpec,
    TrainedCombiner,
    combine_max_confidence,
    combine_rows,
)
from .forest import TrainedForest, fit_forest
from .smo import TrainedSmo, fit_smo

__all__ = [
    "ClassifierSpec",
    "Classifier",
    "CombinerSpec",
    "ForestSpec",
    "ProbDist",
    "SmoSpec",
    "TrainedCombiner",
    "TrainedForest",
    "TrainedSmo",
    "combine_max_confidence",
    "combine_rows",
    "default_stage_specs",
    "fit",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "predict_proba",
    "save_model",
]

MODEL_FORMAT_VERSION = 1


def default_stage_specs() -> list[ClassifierSpec]:
    """The 3-stage recipe: forest, margin classifier, then the
    max-confidence combiner over the first two stages."""
    return [ForestSpec(trees=100), SmoSpec(), CombinerSpec(left=0, right=1)]


def predict_proba(model: Classifier, x) -> ProbDist:
    """Distribution over the model's label space for one feature vector."""
    return model.predict_proba(x)


def fit(spec: ClassifierSpec, ds: Dataset, seed: int) -> Classifier:
    """Train one classifier on a dataset; deterministic per (spec, ds, seed)."""
    if ds.n_classes < 2:
        raise TrainingError("training needs at least 2 labels")
    counts = ds.class_counts()
    if (counts == 0).any():
        empty = [ds.labels[i] for i in np.nonzero(counts == 0)[0]]
        raise TrainingError(f"labels with zero training instances: {empty}")
    if isinstance(spec, ForestSpec):
        return fit_forest(spec, ds.x, ds.y, ds.labels, seed)
    if isinstance(spec, SmoSpec):
        return fit_smo(spec, ds.x, ds.y, ds.labels, seed)
    if isinstance(spec, CombinerSpec):
        raise TrainingError(
            "the pair combiner reuses already-trained stages and can only be "
            "fitted inside a multistage ensemble"
        )
    raise TrainingError(f"unknown classifier spec {spec!r}")


def model_to_dict(model: Classifier) -> dict:
    if isinstance(model, (TrainedForest, TrainedSmo)):
        doc = model.to_dict()
    elif isinstance(model, TrainedCombiner):
        doc = {
            "kind": "max_confidence_pair",
            "left": model.spec.left,
            "right": model.spec.right,
            "a": model_to_dict(model.a),
            "b": model_to_dict(model.b),
        }
    else:
        raise DataError(f"cannot serialize {type(model).__name__}")
    doc["format_version"] = MODEL_FORMAT_VERSION
    return doc


def model_from_dict(doc: dict) -> Classifier:
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version!r}")
    kind = doc.get("kind")
    if kind == "random_forest":
        return TrainedForest.from_dict(doc)
    if kind == "smo_margin":
        return TrainedSmo.from_dict(doc)
    if kind == "max_confidence_pair":
        return TrainedCombiner(
            CombinerSpec(left=doc["left"], right=doc["right"]),
            model_from_dict(doc["a"]),
            model_from_dict(doc["b"]),
        )
    raise DataError(f"unknown model kind {kind!r}")


def save_model(model: Classifier, path) -> None:
    """Dump a trained model as self-describing JSON; reloading reproduces
    predictions bit-exactly (floats round-trip through repr)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> Classifier:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
