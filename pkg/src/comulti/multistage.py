"""Multistage ensembles: ordered classifiers with activation thresholds.

Stages are evaluated in order; an instance stops at the first stage whose
top-class probability meets that stage's threshold.  With the default
threshold of 1.0 per stage almost nothing passes early, so the last stage is
unconditionally terminal: whatever distribution it produces is the answer.
The returned distribution is always some stage's raw output, never a blend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import classifiers
from .classifiers import (
    Classifier,
    ClassifierSpec,
    CombinerSpec,
    ProbDist,
    TrainedCombiner,
    combine_rows,
)
from .dataset import Dataset
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class StageThresholds:
    """Per-stage activation thresholds, each in (0, 1]; default is 1.0."""

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ConfigError("at least one stage threshold is required")
        for v in self.values:
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"threshold {v} outside (0, 1]")

    def __len__(self) -> int:
        return len(self.values)

    @staticmethod
    def ones(n: int) -> "StageThresholds":
        return StageThresholds((1.0,) * n)


@dataclass(frozen=True)
class StagedPrediction:
    """One prediction plus the 1-based index of the stage that produced it."""

    dist: ProbDist
    stage_used: int


class MultistageModel:
    """Ordered trained stages sharing one label space."""

    def __init__(self, stages: Sequence[Classifier], thresholds: StageThresholds):
        stages = list(stages)
        if not stages:
            raise ConfigError("a multistage model needs at least one stage")
        if len(thresholds) != len(stages):
            raise ConfigError(
                f"{len(stages)} stages but {len(thresholds)} thresholds"
            )
        space = stages[0].space
        for s in stages[1:]:
            if s.space != space:
                raise ConfigError("all stages must share one label space")
        self.stages = stages
        self.thresholds = thresholds
        self.space = space

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def predict_batch(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(distributions, stage_used) for a batch.

        Stage outputs are cached so a combiner stage reuses the raw
        distributions of the stages it wraps instead of re-predicting.
        """
        n = x.shape[0]
        k = len(self.space)
        out = np.zeros((n, k))
        stage_used = np.zeros(n, dtype=np.int64)
        cache: list[np.ndarray] = []
        remaining = np.arange(n)
        for s, (clf, thr) in enumerate(zip(self.stages, self.thresholds.values)):
            stage_out = np.full((n, k), np.nan)
            if remaining.size:
                spec = getattr(clf, "spec", None)
                if isinstance(spec, CombinerSpec):
                    dists = combine_rows(cache[spec.left][remaining],
                                         cache[spec.right][remaining])
                else:
                    dists = clf.predict_proba_batch(_rows(x, remaining))
                stage_out[remaining] = dists
            cache.append(stage_out)
            if remaining.size == 0:
                continue
            last = s == self.n_stages - 1
            conf = stage_out[remaining].max(axis=1)
            hit = np.ones(remaining.size, dtype=bool) if last else conf >= thr
            done = remaining[hit]
            out[done] = stage_out[done]
            stage_used[done] = s + 1
            remaining = remaining[~hit]
        return out, stage_used

    def predict(self, x) -> StagedPrediction:
        """Walk the stages for a single feature vector."""
        row = x.reshape(1, -1) if getattr(x, "ndim", 1) == 1 else x
        if row.shape[0] != 1:
            raise DataError("expected a single feature vector")
        dists, used = self.predict_batch(row)
        return StagedPrediction(ProbDist(self.space, dists[0]), int(used[0]))

    def stage_histogram(self, stage_used: np.ndarray) -> list[int]:
        """Instance counts per stage from a ``predict_batch`` result."""
        return np.bincount(stage_used, minlength=self.n_stages + 1)[1:].tolist()

    def to_dict(self) -> dict:
        docs = []
        for clf in self.stages:
            spec = getattr(clf, "spec", None)
            if isinstance(spec, CombinerSpec):
                docs.append({"kind": "combiner_ref", "left": spec.left,
                             "right": spec.right})
            else:
                docs.append(classifiers.model_to_dict(clf))
        return {"stages": docs, "thresholds": list(self.thresholds.values)}

    @staticmethod
    def from_dict(doc: dict) -> "MultistageModel":
        stages: list[Classifier] = []
        for item in doc["stages"]:
            if item.get("kind") == "combiner_ref":
                spec = CombinerSpec(left=item["left"], right=item["right"])
                stages.append(TrainedCombiner(spec, stages[spec.left],
                                              stages[spec.right]))
            else:
                stages.append(classifiers.model_from_dict(item))
        return MultistageModel(stages, StageThresholds(tuple(doc["thresholds"])))


def _rows(x, idx: np.ndarray):
    return x[idx]


def fit_multistage(specs: Sequence[ClassifierSpec], thresholds: StageThresholds,
                   ds: Dataset, seed: int) -> MultistageModel:
    """Train every stage on the same dataset.

    Combiner stages are wired to the already-trained stages they reference
    (which must come earlier in the sequence).  Stage seeds are spawned from
    ``seed`` so results do not depend on training order.
    """
    specs = list(specs)
    if not specs:
        raise ConfigError("at least one stage spec is required")
    if len(thresholds) != len(specs):
        raise ConfigError(f"{len(specs)} specs but {len(thresholds)} thresholds")
    children = np.random.SeedSequence(seed).spawn(len(specs))
    stages: list[Classifier] = []
    for s, spec in enumerate(specs):
        if isinstance(spec, CombinerSpec):
            if not (0 <= spec.left < s and 0 <= spec.right < s):
                raise ConfigError(
                    f"combiner at stage {s + 1} must reference earlier stages, "
                    f"got {spec.left} and {spec.right}"
                )
            stages.append(TrainedCombiner(spec, stages[spec.left],
                                          stages[spec.right]))
        else:
            child_seed = int(children[s].generate_state(1)[0])
            stages.append(classifiers.fit(spec, ds, child_seed))
    return MultistageModel(stages, thresholds)


def predict_multistage(m: MultistageModel, x) -> StagedPrediction:
    """Functional alias for :meth:`MultistageModel.predict`."""
    return m.predict(x)
