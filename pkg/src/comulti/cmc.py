"""Two-layer co-multistage model for datasets with one skewed class.

The first layer is a binary multistage ensemble over the majority class
versus the cluster of all minority classes; it is a confidence gate.  When
it puts strictly more probability on the majority side, the answer is the
majority class and the second layer is never evaluated.  Otherwise a full
multiclass multistage ensemble makes the call.  The model requires exactly
one majority class; datasets with several skewed classes belong to the
multi-skew variant instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .classifiers import ClassifierSpec, default_stage_specs
from .dataset import BINARY, FULL, ClassStats, Dataset, LabelView, apply_view, make_view
from .errors import DataError
from .multistage import MultistageModel, StageThresholds, fit_multistage


@dataclass(frozen=True)
class CmcExplanation:
    """Which layer and stage decided, with the gate probabilities."""

    layer: str  # "binary" or "multi"
    stage_used: int
    p_majority: float
    p_minority: float


class CmcModel:
    def __init__(self, binary: MultistageModel, multi: MultistageModel,
                 binary_view: LabelView, full_view: LabelView,
                 stats: ClassStats):
        if len(binary.space) != 2:
            raise DataError("binary layer must have exactly 2 view labels")
        if len(stats.majority) != 1:
            raise DataError("this model requires exactly one majority class")
        if multi.space != stats.labels:
            raise DataError("multiclass layer must cover the original labels")
        self.binary = binary
        self.multi = multi
        self.binary_view = binary_view
        self.full_view = full_view
        self.stats = stats
        self.majority_class = stats.majority[0]

    def predict_batch(self, x) -> tuple[np.ndarray, dict]:
        """Labels for a batch plus routing info.

        The multiclass layer is evaluated lazily, only on rows the binary
        gate does not settle.
        """
        n = x.shape[0]
        b_dists, b_stages = self.binary.predict_batch(x)
        maj_wins = b_dists[:, 0] > b_dists[:, 1]  # strict: ties fall through
        labels = np.empty(n, dtype=np.int64)
        labels[maj_wins] = self.majority_class
        multi_rows = np.nonzero(~maj_wins)[0]
        m_stages = np.zeros(n, dtype=np.int64)
        if multi_rows.size:
            m_dists, used = self.multi.predict_batch(x[multi_rows])
            labels[multi_rows] = np.argmax(m_dists, axis=1)
            m_stages[multi_rows] = used
        info = {
            "layer_counts": {
                "binary": int(maj_wins.sum()),
                "multi": int(multi_rows.size),
            },
            "binary_stage_histogram": self.binary.stage_histogram(b_stages),
            "multi_stage_histogram": self.multi.stage_histogram(
                m_stages[multi_rows]
            ) if multi_rows.size else [0] * self.multi.n_stages,
        }
        return labels, info

    def predict(self, x) -> tuple[int, CmcExplanation]:
        """Single-instance prediction with an explanation record."""
        row = x.reshape(1, -1) if getattr(x, "ndim", 1) == 1 else x
        b = self.binary.predict(row)
        p_maj, p_min = float(b.dist.p[0]), float(b.dist.p[1])
        if p_maj > p_min:
            return self.majority_class, CmcExplanation(
                "binary", b.stage_used, p_maj, p_min)
        m = self.multi.predict(row)
        return m.dist.top, CmcExplanation("multi", m.stage_used, p_maj, p_min)

    def to_dict(self) -> dict:
        return {
            "kind": "cmc",
            "binary": self.binary.to_dict(),
            "multi": self.multi.to_dict(),
            "binary_view": self.binary_view.to_dict(),
            "full_view": self.full_view.to_dict(),
            "stats": self.stats.to_dict(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "CmcModel":
        return CmcModel(
            MultistageModel.from_dict(doc["binary"]),
            MultistageModel.from_dict(doc["multi"]),
            LabelView.from_dict(doc["binary_view"]),
            LabelView.from_dict(doc["full_view"]),
            ClassStats.from_dict(doc["stats"]),
        )


def fit_cmc(ds_train: Dataset, stats: ClassStats,
            binary_thresholds: Optional[StageThresholds] = None,
            multi_thresholds: Optional[StageThresholds] = None,
            seed: int = 0,
            specs: Optional[Sequence[ClassifierSpec]] = None) -> CmcModel:
    """Train the binary gate and the full multiclass layer.

    Both layers use the default 3-stage recipe unless ``specs`` overrides it.
    """
    if len(stats.majority) != 1:
        raise DataError(
            f"{len(stats.majority)} majority classes; this model handles "
            "exactly one (use the multi-skew variant for several)"
        )
    specs = list(specs) if specs is not None else default_stage_specs()
    if binary_thresholds is None:
        binary_thresholds = StageThresholds.ones(len(specs))
    if multi_thresholds is None:
        multi_thresholds = StageThresholds.ones(len(specs))
    binary_view = make_view(stats, BINARY)
    full_view = make_view(stats, FULL)
    seeds = np.random.SeedSequence(seed).spawn(2)
    binary = fit_multistage(specs, binary_thresholds,
                            apply_view(ds_train, binary_view),
                            int(seeds[0].generate_state(1)[0]))
    multi = fit_multistage(specs, multi_thresholds,
                           apply_view(ds_train, full_view),
                           int(seeds[1].generate_state(1)[0]))
    return CmcModel(binary, multi, binary_view, full_view, stats)


def predict_cmc(m: CmcModel, x) -> tuple[int, CmcExplanation]:
    """Functional alias for :meth:`CmcModel.predict`."""
    return m.predict(x)
