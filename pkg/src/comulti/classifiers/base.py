"""Shared classifier plumbing: probability distributions, specs, combiner.

Every trained model predicts over a fixed label space (the tuple of view
label names it was fitted on) and must be deterministic after training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import DataError

PROB_ATOL = 1e-9


@dataclass(frozen=True)
class ProbDist:
    """A normalized probability vector over a named label space."""

    space: tuple[str, ...]
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        object.__setattr__(self, "p", p)
        if p.ndim != 1 or p.size != len(self.space):
            raise DataError(f"{p.size} probabilities for {len(self.space)} labels")
        if (p < 0).any():
            raise DataError("negative probability")
        if abs(p.sum() - 1.0) > PROB_ATOL:
            raise DataError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)

    @property
    def top(self) -> int:
        """Argmax label id; ties break toward the lowest id."""
        return int(np.argmax(self.p))

    @property
    def confidence(self) -> float:
        return float(self.p.max())


@dataclass(frozen=True)
class ForestSpec:
    """Bagged forest of CART-style trees grown to purity, Gini splits,
    ``floor(sqrt(n_features))`` random candidate features per split."""

    trees: int = 100

    kind = "random_forest"

    def __post_init__(self):
        if self.trees < 1:
            raise DataError(f"trees must be >= 1, got {self.trees}")


@dataclass(frozen=True)
class SmoSpec:
    """One-vs-rest margin classifier trained by sequential minimal
    optimization with a polynomial kernel ``(x . y + 1)^degree`` and
    per-class logistic (Platt) calibration of the decision scores."""

    degree: int = 1
    c: float = 1.0
    tol: float = 1e-3
    max_iter: int = 200_000

    kind = "smo_margin"

    def __post_init__(self):
        if self.degree < 1:
            raise DataError(f"degree must be >= 1, got {self.degree}")
        if self.c <= 0:
            raise DataError(f"C must be > 0, got {self.c}")
        if self.tol <= 0:
            raise DataError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True)
class CombinerSpec:
    """Max-confidence pair combiner over two earlier multistage stages
    (0-based stage indices); trainable only inside a multistage fit."""

    left: int = 0
    right: int = 1

    kind = "max_confidence_pair"

    def __post_init__(self):
        if self.left == self.right:
            raise DataError("combiner needs two distinct stages")


ClassifierSpec = Union[ForestSpec, SmoSpec, CombinerSpec]


class Classifier:
    """Base for trained models: a fixed label space plus batch prediction."""

    spec: ClassifierSpec
    space: tuple[str, ...]

    @property
    def n_labels(self) -> int:
        return len(self.space)

    def predict_proba_batch(self, x) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, x) -> ProbDist:
        """Distribution for a single feature vector."""
        row = _as_row(x, expected=None)
        return ProbDist(self.space, self.predict_proba_batch(row)[0])

    def predict_batch(self, x) -> np.ndarray:
        """Argmax labels for a batch; ties break toward the lowest id."""
        return np.argmax(self.predict_proba_batch(x), axis=1)


def _as_row(x, expected) -> np.ndarray:
    import scipy.sparse as sp

    if sp.issparse(x):
        arr = x.toarray()
    else:
        arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] != 1:
        raise DataError("expected a single feature vector")
    if expected is not None and arr.shape[1] != expected:
        raise DataError(f"feature vector has {arr.shape[1]} values, model "
                        f"expects {expected}")
    return arr


def combine_max_confidence(a: ProbDist, b: ProbDist) -> ProbDist:
    """Pick whichever distribution is more confident; ties keep the first."""
    if a.space != b.space:
        raise DataError(f"label space mismatch: {a.space} vs {b.space}")
    return a if a.confidence >= b.confidence else b


class TrainedCombiner(Classifier):
    """Pair combiner bound to two already-trained stage models."""

    def __init__(self, spec: CombinerSpec, a: Classifier, b: Classifier):
        if a.space != b.space:
            raise DataError("combined stages must share one label space")
        self.spec = spec
        self.a = a
        self.b = b
        self.space = a.space

    def predict_proba_batch(self, x) -> np.ndarray:
        return combine_rows(self.a.predict_proba_batch(x),
                            self.b.predict_proba_batch(x))


def combine_rows(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Row-wise max-confidence combination of two (n, k) probability arrays."""
    keep_a = pa.max(axis=1) >= pb.max(axis=1)
    return np.where(keep_a[:, None], pa, pb)
