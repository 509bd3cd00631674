"""Co-multistage model for datasets with several skewed majority classes.

Four multistage ensembles over four label spaces: a binary gate ``b``
(majority cluster vs minority cluster), ``m1`` over the majority cluster
plus each minority class, ``m2`` over the minority cluster plus each
majority class, and a full-space fallback ``m3``.  The top layer forms a
quorum: when the gate and the two reduced-space models agree that the mass
belongs to the majority side, ``m1`` answers; when both agree on the
minority side, ``m2`` answers; any disagreement (ties included, both
comparisons are strict) falls back to ``m3``.

A selected distribution can put its argmax on a cluster pseudo-label, which
is not a dataset class.  The pseudo-label is resolved by the complementary
top-layer model, the only one that discriminates inside that cluster: the
majority cluster picked by ``m1`` is resolved by ``m2``'s distribution
restricted to the majority classes, and the minority cluster picked by
``m2`` by ``m1``'s restricted to the minority classes.  The final answer is
therefore always an original label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .classifiers import ClassifierSpec, default_stage_specs
from .dataset import (
    BINARY,
    FULL,
    MAJ_CLUSTER,
    MIN_CLUSTER,
    ClassStats,
    Dataset,
    LabelView,
    apply_view,
    make_view,
)
from .errors import DataError
from .multistage import MultistageModel, StageThresholds, fit_multistage

BRANCH_MAJORITY = "majority_consensus"   # m1 answers
BRANCH_MINORITY = "minority_consensus"   # m2 answers
BRANCH_FALLBACK = "quorum_disagreement"  # m3 answers


@dataclass(frozen=True)
class CmcmExplanation:
    """Routing record for one instance."""

    branch: str
    stage_used: int
    pseudo_resolved: bool
    p_binary_majority: float
    p_binary_minority: float
    p_m1_cluster: float
    p_m2_cluster: float


class CmcmModel:
    def __init__(self, b: MultistageModel, m1: MultistageModel,
                 m2: MultistageModel, m3: MultistageModel,
                 views: dict[str, LabelView], stats: ClassStats):
        if not stats.majority or not stats.minority:
            raise DataError("need at least one majority and one minority class")
        if len(b.space) != 2:
            raise DataError("binary gate must have exactly 2 view labels")
        if len(m1.space) != 1 + len(stats.minority):
            raise DataError("majority-cluster layer has the wrong label count")
        if len(m2.space) != 1 + len(stats.majority):
            raise DataError("minority-cluster layer has the wrong label count")
        if m3.space != stats.labels:
            raise DataError("fallback layer must cover the original labels")
        self.b = b
        self.m1 = m1
        self.m2 = m2
        self.m3 = m3
        self.views = views
        self.stats = stats
        # Slot 1.. of each cluster view lists member classes in original order.
        self._m1_slot_to_orig = np.array(stats.minority, dtype=np.int64)
        self._m2_slot_to_orig = np.array(stats.majority, dtype=np.int64)

    def predict_batch(self, x) -> tuple[np.ndarray, dict]:
        """Labels plus branch-routing statistics for a batch."""
        n = x.shape[0]
        db, sb = self.b.predict_batch(x)
        d1, s1 = self.m1.predict_batch(x)
        d2, s2 = self.m2.predict_batch(x)
        p_b_maj = db[:, 0]
        p_b_min = db[:, 1]
        p_m1_cluster = d1[:, 0]
        p_m2_cluster = d2[:, 0]
        case1 = (p_b_maj > p_b_min) & (p_m1_cluster > p_m2_cluster)
        case2 = (p_b_maj < p_b_min) & (p_m1_cluster < p_m2_cluster)
        case3 = ~(case1 | case2)

        labels = np.empty(n, dtype=np.int64)
        pseudo = np.zeros(n, dtype=bool)
        stage_used = np.zeros(n, dtype=np.int64)

        rows = np.nonzero(case1)[0]
        if rows.size:
            labels[rows], pseudo[rows] = self._resolve_cluster_pick(
                d1[rows], self._m1_slot_to_orig, d2[rows], self._m2_slot_to_orig
            )
            stage_used[rows] = s1[rows]
        rows = np.nonzero(case2)[0]
        if rows.size:
            labels[rows], pseudo[rows] = self._resolve_cluster_pick(
                d2[rows], self._m2_slot_to_orig, d1[rows], self._m1_slot_to_orig
            )
            stage_used[rows] = s2[rows]
        rows = np.nonzero(case3)[0]
        m3_hist = [0] * self.m3.n_stages
        if rows.size:
            d3, s3 = self.m3.predict_batch(x[rows])
            labels[rows] = np.argmax(d3, axis=1)
            stage_used[rows] = s3
            m3_hist = self.m3.stage_histogram(s3)

        info = {
            "branch_counts": {
                BRANCH_MAJORITY: int(case1.sum()),
                BRANCH_MINORITY: int(case2.sum()),
                BRANCH_FALLBACK: int(case3.sum()),
            },
            "pseudo_label_resolutions": int(pseudo.sum()),
            "b_stage_histogram": self.b.stage_histogram(sb),
            "m1_stage_histogram": self.m1.stage_histogram(s1),
            "m2_stage_histogram": self.m2.stage_histogram(s2),
            "m3_stage_histogram": m3_hist,
        }
        return labels, info

    @staticmethod
    def _resolve_cluster_pick(picked: np.ndarray, picked_members: np.ndarray,
                              other: np.ndarray, other_members: np.ndarray):
        """Argmax of the selected cluster-view distributions, with cluster
        picks resolved inside the complementary model's member slots.

        ``picked``/``other`` are (n, 1 + members) arrays whose slot 0 is the
        cluster pseudo-label; slot ``s >= 1`` of the *other* model maps to
        original class ``other_members[s - 1]``.
        """
        top = np.argmax(picked, axis=1)
        hit_cluster = top == 0
        labels = np.empty(picked.shape[0], dtype=np.int64)
        direct = ~hit_cluster
        labels[direct] = picked_members[top[direct] - 1]
        if hit_cluster.any():
            inside = np.argmax(other[hit_cluster][:, 1:], axis=1)
            labels[hit_cluster] = other_members[inside]
        return labels, hit_cluster

    def predict(self, x) -> tuple[int, CmcmExplanation]:
        """Single-instance prediction with a routing explanation."""
        row = x.reshape(1, -1) if getattr(x, "ndim", 1) == 1 else x
        db, sb = self.b.predict_batch(row)
        d1, s1 = self.m1.predict_batch(row)
        d2, s2 = self.m2.predict_batch(row)
        p_b_maj, p_b_min = float(db[0, 0]), float(db[0, 1])
        p1, p2 = float(d1[0, 0]), float(d2[0, 0])
        if p_b_maj > p_b_min and p1 > p2:
            branch, stage = BRANCH_MAJORITY, int(s1[0])
            label, pseudo = self._resolve_cluster_pick(
                d1, self._m1_slot_to_orig, d2, self._m2_slot_to_orig)
        elif p_b_maj < p_b_min and p1 < p2:
            branch, stage = BRANCH_MINORITY, int(s2[0])
            label, pseudo = self._resolve_cluster_pick(
                d2, self._m2_slot_to_orig, d1, self._m1_slot_to_orig)
        else:
            d3, s3 = self.m3.predict_batch(row)
            branch, stage = BRANCH_FALLBACK, int(s3[0])
            label, pseudo = np.argmax(d3, axis=1), np.zeros(1, dtype=bool)
        return int(label[0]), CmcmExplanation(
            branch, stage, bool(pseudo[0]), p_b_maj, p_b_min, p1, p2)

    def to_dict(self) -> dict:
        return {
            "kind": "cmcm",
            "b": self.b.to_dict(),
            "m1": self.m1.to_dict(),
            "m2": self.m2.to_dict(),
            "m3": self.m3.to_dict(),
            "views": {k: v.to_dict() for k, v in self.views.items()},
            "stats": self.stats.to_dict(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "CmcmModel":
        return CmcmModel(
            MultistageModel.from_dict(doc["b"]),
            MultistageModel.from_dict(doc["m1"]),
            MultistageModel.from_dict(doc["m2"]),
            MultistageModel.from_dict(doc["m3"]),
            {k: LabelView.from_dict(v) for k, v in doc["views"].items()},
            ClassStats.from_dict(doc["stats"]),
        )


def fit_cmcm(ds_train: Dataset, stats: ClassStats,
             thresholds: Optional[Sequence[StageThresholds]] = None,
             seed: int = 0,
             specs: Optional[Sequence[ClassifierSpec]] = None) -> CmcmModel:
    """Train the four multistage models on the four views of one dataset.

    ``thresholds`` holds one :class:`StageThresholds` per model, in the
    order (b, m1, m2, m3); all-default when omitted.
    """
    if not stats.majority:
        raise DataError("no majority classes: nothing to cluster")
    if not stats.minority:
        raise DataError("no minority classes: nothing to protect")
    specs = list(specs) if specs is not None else default_stage_specs()
    if thresholds is None:
        thresholds = [StageThresholds.ones(len(specs)) for _ in range(4)]
    thresholds = list(thresholds)
    if len(thresholds) != 4:
        raise DataError(f"need 4 threshold vectors, got {len(thresholds)}")
    kinds = (BINARY, MAJ_CLUSTER, MIN_CLUSTER, FULL)
    views = {kind: make_view(stats, kind) for kind in kinds}
    seeds = np.random.SeedSequence(seed).spawn(4)
    models = [
        fit_multistage(specs, thr, apply_view(ds_train, views[kind]),
                       int(child.generate_state(1)[0]))
        for kind, thr, child in zip(kinds, thresholds, seeds)
    ]
    return CmcmModel(models[0], models[1], models[2], models[3], views, stats)


def predict_cmcm(m: CmcmModel, x) -> tuple[int, CmcmExplanation]:
    """Functional alias for :meth:`CmcmModel.predict`."""
    return m.predict(x)
