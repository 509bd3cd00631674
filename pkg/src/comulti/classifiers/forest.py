"""Bagged forest of CART-style trees with Gini splits.

Each tree trains on a bootstrap resample and is grown until nodes are pure
or hold fewer than 2 samples.  At every split, candidate features are drawn
at random as a size-``floor(sqrt(n_features))`` subset; constant features do
not consume candidate slots (otherwise purity growth could stall on nodes
whose sampled candidates happen to be constant).  The forest predicts by
majority vote: class probabilities are vote fractions, so every probability
is a multiple of ``1/trees``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import DataError
from .base import Classifier, ForestSpec

# Densify sparse training matrices below this element count; larger ones are
# accessed column-by-column through CSC.
_DENSIFY_ELEMS = 30_000_000


class _Columns:
    """Column accessor over a dense matrix or a CSC sparse matrix."""

    def __init__(self, x):
        if sp.issparse(x):
            if x.shape[0] * x.shape[1] <= _DENSIFY_ELEMS:
                self.dense = np.asarray(x.todense(), dtype=np.float64)
                self.csc = None
            else:
                self.dense = None
                self.csc = x.tocsc()
                self._buf = np.zeros(x.shape[0], dtype=np.float64)
        else:
            self.dense = np.asarray(x, dtype=np.float64)
            self.csc = None
        self.shape = x.shape

    def get(self, rows: np.ndarray, col: int) -> np.ndarray:
        if self.dense is not None:
            return self.dense[rows, col]
        lo, hi = self.csc.indptr[col], self.csc.indptr[col + 1]
        buf = self._buf
        idx = self.csc.indices[lo:hi]
        buf[idx] = self.csc.data[lo:hi]
        out = buf[rows].copy()
        buf[idx] = 0.0
        return out


class _Tree:
    """Flat-array binary tree: feature < 0 marks a leaf voting ``vote``."""

    __slots__ = ("feature", "threshold", "left", "right", "vote")

    def __init__(self, feature, threshold, left, right, vote):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.vote = np.asarray(vote, dtype=np.int32)

    def votes(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int32)
        feat = self.feature[node]
        active = feat >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            cur = node[rows]
            go_left = x[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            feat = self.feature[node]
            active = feat >= 0
        return self.vote[node]


def _best_split_of_column(values: np.ndarray, y: np.ndarray, n_classes: int):
    """Best Gini split of one feature column, or None if constant.

    Returns (weighted_gini, threshold).  Ties between cut points resolve to
    the lowest threshold, keeping the grower deterministic.
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    boundaries = np.nonzero(v[:-1] < v[1:])[0]
    if boundaries.size == 0:
        return None
    ys = y[order]
    n = v.size
    onehot = np.zeros((n, n_classes), dtype=np.float64)
    onehot[np.arange(n), ys] = 1.0
    cum = np.cumsum(onehot, axis=0)
    left = cum[boundaries]
    total = cum[-1]
    right = total - left
    n_left = boundaries + 1.0
    n_right = n - n_left
    gini_left = 1.0 - ((left / n_left[:, None]) ** 2).sum(axis=1)
    gini_right = 1.0 - ((right / n_right[:, None]) ** 2).sum(axis=1)
    weighted = (n_left * gini_left + n_right * gini_right) / n
    best = int(np.argmin(weighted))
    cut = boundaries[best]
    thr = 0.5 * (v[cut] + v[cut + 1])
    if not v[cut] <= thr < v[cut + 1]:  # guard against midpoint rounding up
        thr = v[cut]
    return float(weighted[best]), float(thr)


def _grow_tree(cols: _Columns, y: np.ndarray, n_classes: int,
               rng: np.random.Generator) -> _Tree:
    n_features = cols.shape[1]
    n_candidates = max(1, int(np.floor(np.sqrt(n_features))))
    feature, threshold, left, right, vote = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        vote.append(-1)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(y.size, dtype=np.intp))]
    while stack:
        node_id, rows = stack.pop()
        y_node = y[rows]
        counts = np.bincount(y_node, minlength=n_classes)
        if rows.size < 2 or counts.max() == rows.size:
            vote[node_id] = int(np.argmax(counts))
            continue
        best = None
        tried_valid = 0
        for f in rng.permutation(n_features):
            found = _best_split_of_column(cols.get(rows, f), y_node, n_classes)
            if found is None:
                continue
            tried_valid += 1
            score, thr = found
            if best is None or score < best[0]:
                best = (score, thr, int(f))
            if tried_valid >= n_candidates:
                break
        if best is None:  # impure but no feature separates the rows
            vote[node_id] = int(np.argmax(counts))
            continue
        _, thr, f = best
        mask = cols.get(rows, f) <= thr
        feature[node_id] = f
        threshold[node_id] = thr
        left_id = new_node()
        right_id = new_node()
        left[node_id] = left_id
        right[node_id] = right_id
        stack.append((right_id, rows[~mask]))
        stack.append((left_id, rows[mask]))
    return _Tree(feature, threshold, left, right, vote)


class TrainedForest(Classifier):
    def __init__(self, spec: ForestSpec, space: tuple[str, ...],
                 trees: list[_Tree], n_features: int):
        self.spec = spec
        self.space = space
        self.trees = trees
        self.n_features = n_features

    def predict_proba_batch(self, x) -> np.ndarray:
        if x.shape[1] != self.n_features:
            raise DataError(f"input has {x.shape[1]} features, model expects "
                            f"{self.n_features}")
        n = x.shape[0]
        counts = np.zeros((n, self.n_labels), dtype=np.float64)
        # Chunk so sparse inputs densify a slice at a time.
        step = max(1, int(10_000_000 / max(1, self.n_features)))
        for lo in range(0, n, step):
            chunk = x[lo:lo + step]
            dense = np.asarray(chunk.todense(), dtype=np.float64) \
                if sp.issparse(chunk) else np.asarray(chunk, dtype=np.float64)
            rows = np.arange(dense.shape[0])
            for tree in self.trees:
                counts[lo + rows, tree.votes(dense)] += 1.0
        return counts / len(self.trees)

    def tree_votes(self, x) -> np.ndarray:
        """(trees, n) matrix of raw per-tree votes, for vote-count auditing."""
        dense = np.asarray(x.todense(), dtype=np.float64) if sp.issparse(x) \
            else np.asarray(x, dtype=np.float64)
        return np.stack([tree.votes(dense) for tree in self.trees])

    def to_dict(self) -> dict:
        return {
            "kind": "random_forest",
            "trees": self.spec.trees,
            "space": list(self.space),
            "n_features": self.n_features,
            "forest": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "vote": t.vote.tolist(),
                }
                for t in self.trees
            ],
        }

    @staticmethod
    def from_dict(doc: dict) -> "TrainedForest":
        trees = [
            _Tree(t["feature"], t["threshold"], t["left"], t["right"], t["vote"])
            for t in doc["forest"]
        ]
        return TrainedForest(ForestSpec(trees=doc["trees"]),
                             tuple(doc["space"]), trees, doc["n_features"])


def fit_forest(spec: ForestSpec, x, y: np.ndarray, space: tuple[str, ...],
               seed: int) -> TrainedForest:
    """Train ``spec.trees`` trees on bootstrap resamples of (x, y).

    Per-tree randomness comes from seeds spawned off ``seed``, so results do
    not depend on training order or parallel schedule.
    """
    n = x.shape[0]
    n_classes = len(space)
    dense_all = None
    csr_all = None
    if sp.issparse(x) and x.shape[0] * x.shape[1] > _DENSIFY_ELEMS:
        csr_all = x.tocsr()
    elif sp.issparse(x):
        dense_all = np.asarray(x.todense(), dtype=np.float64)
    else:
        dense_all = np.asarray(x, dtype=np.float64)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(spec.trees):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=n)
        sub = _Columns(dense_all[boot] if dense_all is not None else csr_all[boot])
        trees.append(_grow_tree(sub, y[boot], n_classes, rng))
    return TrainedForest(spec, space, trees, x.shape[1])
