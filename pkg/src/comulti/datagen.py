"""Synthetic benchmark datasets.

None of these mimic any particular published corpus row-for-row; they are
generated stand-ins with comparable shape and skew so the pipeline can be
exercised end-to-end without shipping third-party data:

* :func:`rule_grid` - a deterministic 1728-row grid of six ordinal
  attributes labeled by a hand-built hierarchical rule model, yielding one
  dominant class and two tiny ones (a single-skew ordinal benchmark).
* :func:`gaussian_blobs` - small numeric datasets with configurable class
  sizes and separation (a single-skew numeric benchmark).
* :func:`sparse_topics` - sparse bag-of-words-style count data with many
  classes of power-law sizes, including minority classes that only differ
  from a majority class by topic emphasis (a multi-skew text benchmark).
"""

from __future__ import annotations

import itertools

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset, FeatureSchema, FeatureSpec, ORDINAL

# ---------------------------------------------------------------------------
# Rule-grid benchmark

_RULE_FEATURES = (
    FeatureSpec("price_buy", ORDINAL, ("very_high", "high", "medium", "low")),
    FeatureSpec("price_upkeep", ORDINAL, ("very_high", "high", "medium", "low")),
    FeatureSpec("doors", ORDINAL, ("two", "three", "four", "five_plus")),
    FeatureSpec("seats", ORDINAL, ("two", "four", "six")),
    FeatureSpec("cargo", ORDINAL, ("small", "medium", "large")),
    FeatureSpec("safety", ORDINAL, ("low", "medium", "high")),
)

_RULE_LABELS = ("reject", "ok", "good", "excellent")


def _rule_grade(price_buy: int, price_upkeep: int, doors: int, seats: int,
                cargo: int, safety: int) -> int:
    """Hierarchical scoring: overall cost and safe utility, then the grade."""
    cost = (0, 0, 1, 1, 2, 3, 3)[price_buy + price_upkeep]
    if seats == 0:
        utility = 0
    else:
        score = (doors + 1) // 2 + seats + cargo
        utility = 1 if score <= 2 else (2 if score == 3 else 3)
    safe_utility = 0 if safety == 0 else min(utility, 1 + safety)
    if safe_utility == 0 or cost == 0:
        return 0
    if safe_utility == 1:
        return 0 if cost <= 1 else 1
    if safe_utility == 2:
        return 2 if cost == 3 else 1
    return 1 if cost == 1 else (2 if cost == 2 else 3)


def rule_grid() -> Dataset:
    """Full enumeration of the six ordinal attributes (1728 instances),
    labeled by the hierarchical rule model; heavily skewed toward 'reject'."""
    schema = FeatureSchema(_RULE_FEATURES)
    sizes = [len(f.categories) for f in schema.features]
    rows = np.array(list(itertools.product(*(range(s) for s in sizes))),
                    dtype=np.float64)
    y = np.array([_rule_grade(*(int(v) for v in row)) for row in rows],
                 dtype=np.int64)
    return Dataset(schema, rows, y, _RULE_LABELS)


# ---------------------------------------------------------------------------
# Gaussian blobs


def gaussian_blobs(class_sizes, n_features: int = 5, separation: float = 2.2,
                   seed: int = 0, labels=None) -> Dataset:
    """Gaussian clusters (unit spread) at random centers ``separation`` apart.

    ``class_sizes[0]`` is typically the dominant class; centers are drawn on
    a sphere of radius ``separation`` around the first class's center at the
    origin, so overlap shrinks as ``separation`` grows.
    """
    rng = np.random.default_rng(seed)
    k = len(class_sizes)
    centers = np.zeros((k, n_features))
    for c in range(1, k):
        direction = rng.normal(size=n_features)
        centers[c] = separation * direction / np.linalg.norm(direction)
    xs, ys = [], []
    for c, size in enumerate(class_sizes):
        xs.append(rng.normal(size=(size, n_features)) + centers[c])
        ys.append(np.full(size, c, dtype=np.int64))
    if labels is None:
        labels = tuple(f"class{c}" for c in range(k))
    return Dataset(FeatureSchema.numeric(n_features), np.vstack(xs),
                   np.concatenate(ys), tuple(labels))


# ---------------------------------------------------------------------------
# Sparse topic benchmark

MULTISKEW_SIZES = (
    500, 390, 360, 190,                       # majority classes
    135, 120, 105, 95, 85, 75, 65, 55, 45, 38, 28, 22, 16,  # minority classes
)


def sparse_topics(class_sizes=MULTISKEW_SIZES, n_features: int = 2000,
                  n_common: int = 800, signature_size: int = 40,
                  signature_weight: float = 0.2, doc_length: int = 60,
                  n_shadow: int = 3, shadow_decay: float = 1.2,
                  seed: int = 0) -> Dataset:
    """Sparse count data with power-law class sizes and topic signatures.

    Each class owns a block of ``signature_size`` features; a document mixes
    roughly ``signature_weight`` of its tokens from the class signature and
    the rest from a shared Zipf-weighted common pool, so signals are weak and
    spread over many columns.  The last ``n_shadow`` (tiny) classes own no
    block at all: each re-uses a majority class's block with a decaying
    within-block emphasis instead of the owner's uniform one.  Same support,
    different mixture: no single word count separates them well, but the
    weighted combination does.  That is the regime where vote-based forests
    silence small classes while margin classifiers keep them alive.
    """
    rng = np.random.default_rng(seed)
    k = len(class_sizes)
    n_owned = k - n_shadow
    if n_common + n_owned * signature_size > n_features:
        raise ValueError("not enough features for the requested signatures")

    common = np.arange(n_common)
    common_p = 1.0 / (common + 10.0)
    common_p /= common_p.sum()
    uniform = np.full(signature_size, 1.0 / signature_size)
    decay = 1.0 / (1.0 + np.arange(signature_size)) ** shadow_decay
    decay /= decay.sum()
    blocks, block_p = [], []
    for c in range(n_owned):
        blocks.append(n_common + c * signature_size + np.arange(signature_size))
        block_p.append(uniform)
    for s in range(n_shadow):
        blocks.append(blocks[s])  # shadow s leans on majority class s's words
        block_p.append(decay)

    rows, cols, vals, y = [], [], [], []
    row_id = 0
    for c, size in enumerate(class_sizes):
        block, p = blocks[c], block_p[c]
        for _ in range(size):
            n_tokens = max(10, rng.poisson(doc_length))
            n_sig = rng.binomial(n_tokens, signature_weight)
            tokens = np.concatenate([
                rng.choice(block, size=n_sig, p=p),
                rng.choice(common, size=n_tokens - n_sig, p=common_p),
            ])
            feats, counts = np.unique(tokens, return_counts=True)
            rows.extend([row_id] * feats.size)
            cols.extend(feats.tolist())
            vals.extend(counts.tolist())
            y.append(c)
            row_id += 1
    x = sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (rows, cols)),
        shape=(row_id, n_features),
    )
    labels = tuple(f"topic{c:02d}" for c in range(k))
    return Dataset(FeatureSchema.numeric(n_features), x,
                   np.asarray(y, dtype=np.int64), labels)
