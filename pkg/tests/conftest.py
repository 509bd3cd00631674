"""Shared fixtures: tiny datasets and scripted stub classifiers."""

from __future__ import annotations

import numpy as np
import pytest

from comulti.classifiers.base import Classifier
from comulti.dataset import Dataset, FeatureSchema


class LookupStub(Classifier):
    """Classifier whose distribution is scripted per instance.

    The first feature of each row is an index into a fixed table of
    distributions; ``calls`` counts batch invocations so tests can prove a
    layer was never evaluated.
    """

    spec = None

    def __init__(self, space, dists):
        self.space = tuple(space)
        self.dists = np.asarray(dists, dtype=np.float64)
        self.calls = 0

    def predict_proba_batch(self, x):
        self.calls += 1
        idx = np.asarray(x)[:, 0].astype(int)
        return self.dists[idx]


@pytest.fixture
def lookup_stub():
    return LookupStub


def make_dataset(x, y, labels=None, schema=None) -> Dataset:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if labels is None:
        labels = tuple(f"c{i}" for i in range(int(y.max()) + 1))
    if schema is None:
        schema = FeatureSchema.numeric(x.shape[1])
    return Dataset(schema, x, y, tuple(labels))


@pytest.fixture
def tiny_dataset():
    return make_dataset


def two_separable_clusters(n_per_side=10, seed=0, gap=8.0) -> Dataset:
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_per_side, 2))
    b = rng.normal(size=(n_per_side, 2)) + gap
    x = np.vstack([a, b])
    y = np.array([0] * n_per_side + [1] * n_per_side)
    return make_dataset(x, y, labels=("left", "right"))


@pytest.fixture
def separable_clusters():
    return two_separable_clusters
