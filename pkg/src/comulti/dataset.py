"""Dataset loading, encoding, stratified splitting and label-space views.

A :class:`Dataset` couples a feature matrix (dense ndarray or scipy CSR),
integer-coded labels and a feature schema.  Class skew is profiled by
:func:`class_stats`, which partitions labels into majority classes
(count strictly above ``total / n_classes``) and minority classes
(everything else, ties included).  :func:`make_view` / :func:`apply_view`
produce the relabeled views the co-multistage models train on: the binary
majority-vs-minority view, the two cluster views and the identity view.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .errors import DataError

# View kinds.
FULL = "full"
BINARY = "binary"
MAJ_CLUSTER = "maj_cluster"
MIN_CLUSTER = "min_cluster"
VIEW_KINDS = (FULL, BINARY, MAJ_CLUSTER, MIN_CLUSTER)

MAJORITY_CLUSTER_LABEL = "(majority)"
MINORITY_CLUSTER_LABEL = "(minority)"

NUMERIC = "numeric"
ORDINAL = "ordinal"


def round_half_up(x: float) -> int:
    """Round with .5 going up, independent of banker's rounding."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class FeatureSpec:
    """One feature: numeric, or ordinal-nominal with an ordered category list."""

    name: str
    kind: str = NUMERIC
    categories: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.kind not in (NUMERIC, ORDINAL):
            raise DataError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.kind == ORDINAL:
            if self.categories is None or len(self.categories) < 2:
                raise DataError(f"ordinal feature {self.name!r} needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise DataError(f"duplicate categories in feature {self.name!r}")
        elif self.categories is not None:
            raise DataError(f"numeric feature {self.name!r} must not list categories")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature descriptions; names must be unique."""

    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def __len__(self) -> int:
        return len(self.features)

    @staticmethod
    def numeric(n: int, prefix: str = "f") -> "FeatureSchema":
        """All-numeric schema with generated names, for matrix-only sources."""
        return FeatureSchema(tuple(FeatureSpec(f"{prefix}{i}") for i in range(n)))


Matrix = Union[np.ndarray, sp.csr_matrix]


def _freeze(x: Matrix) -> Matrix:
    if sp.issparse(x):
        for buf in (x.data, x.indices, x.indptr):
            buf.setflags(write=False)
    else:
        x.setflags(write=False)
    return x


@dataclass(frozen=True)
class Dataset:
    """Instance-major feature matrix plus 0-based integer labels.

    ``x`` may be dense (float64) or CSR sparse; sparse stores explicit
    nonzeros only.  ``labels[y[i]]`` is the class name of instance ``i``.
    Instances are immutable after construction and safe to share.
    """

    schema: FeatureSchema
    x: Matrix
    y: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        if not sp.issparse(self.x):
            object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        x, y = self.x, self.y
        if x.ndim != 2:
            raise DataError("feature matrix must be 2-D")
        if x.shape[1] != len(self.schema):
            raise DataError(
                f"matrix has {x.shape[1]} columns, schema describes {len(self.schema)}"
            )
        if x.shape[0] != y.shape[0]:
            raise DataError(f"{x.shape[0]} rows vs {y.shape[0]} labels")
        if len(self.labels) != len(set(self.labels)):
            raise DataError("label names must be unique")
        if y.size and (y.min() < 0 or y.max() >= len(self.labels)):
            raise DataError("label id out of range")
        values = x.data if sp.issparse(x) else x
        if values.size and not np.isfinite(values).all():
            raise DataError("feature matrix contains NaN or infinity")
        _freeze(x)
        y.setflags(write=False)

    @property
    def n_instances(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.x)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row subset (or resample, indices may repeat) preserving metadata."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.schema, self.x[idx], self.y[idx].copy(), self.labels)

    def equals(self, other: "Dataset") -> bool:
        """Instance-wise equality: same rows, labels and schema."""
        if self.labels != other.labels or self.schema != other.schema:
            return False
        if self.x.shape != other.x.shape or not np.array_equal(self.y, other.y):
            return False
        a, b = self.x, other.x
        if sp.issparse(a) != sp.issparse(b):
            return False
        if sp.issparse(a):
            diff = (a - b).tocsr()
            diff.eliminate_zeros()
            return diff.nnz == 0
        return np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Loading


def load_csv(path, label_column: str, schema: FeatureSchema) -> Dataset:
    """Load a header-first CSV, encoding features per ``schema``.

    Ordinal-nominal features are encoded as their category index; labels are
    collected in first-appearance order.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(str(exc)) from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        wanted = set(schema.names) | {label_column}
        missing = wanted - set(header)
        if missing:
            raise DataError(f"{path}: missing column(s) {sorted(missing)}")
        extra = set(header) - wanted
        if extra:
            raise DataError(f"{path}: unexpected column(s) {sorted(extra)}")
        col_of = {name: header.index(name) for name in header}
        label_col = col_of[label_column]
        feat_cols = [col_of[f.name] for f in schema.features]

        rows: list[list[float]] = []
        y: list[int] = []
        labels: list[str] = []
        label_ids: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # ignore blank lines
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            encoded = []
            for spec, col in zip(schema.features, feat_cols):
                raw = row[col].strip()
                if spec.kind == ORDINAL:
                    try:
                        encoded.append(float(spec.categories.index(raw)))
                    except ValueError:
                        raise DataError(
                            f"{path}:{lineno}: unknown category {raw!r} "
                            f"for feature {spec.name!r}"
                        ) from None
                else:
                    try:
                        encoded.append(float(raw))
                    except ValueError:
                        raise DataError(
                            f"{path}:{lineno}: non-numeric value {raw!r} "
                            f"for feature {spec.name!r}"
                        ) from None
            name = row[label_col].strip()
            if name not in label_ids:
                label_ids[name] = len(labels)
                labels.append(name)
            y.append(label_ids[name])
            rows.append(encoded)

    if not rows:
        raise DataError(f"{path}: no data rows")
    x = np.asarray(rows, dtype=np.float64)
    return Dataset(schema, x, np.asarray(y, dtype=np.int64), tuple(labels))


def load_sparse(matrix_path, labels_path) -> Dataset:
    """Load the sparse text format: ``nrows ncols nnz`` header, then one line
    per row of space-separated 1-based ``col value`` pairs, with a companion
    labels file holding one label string per row."""
    try:
        with open(matrix_path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise DataError(str(exc)) from None
    lines = [ln for ln in lines if ln != ""]
    if not lines:
        raise DataError(f"{matrix_path}: empty file")
    head = lines[0].split()
    if len(head) != 3:
        raise DataError(f"{matrix_path}: header must be 'nrows ncols nnz'")
    try:
        nrows, ncols, nnz = (int(v) for v in head)
    except ValueError:
        raise DataError(f"{matrix_path}: non-integer header field") from None
    if len(lines) - 1 != nrows:
        raise DataError(
            f"{matrix_path}: header declares {nrows} rows, found {len(lines) - 1}"
        )

    indptr = np.zeros(nrows + 1, dtype=np.int64)
    indices: list[int] = []
    data: list[float] = []
    for r, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) % 2 != 0:
            raise DataError(f"{matrix_path}: row {r + 1} has an odd token count")
        for c_tok, v_tok in zip(parts[::2], parts[1::2]):
            try:
                col = int(c_tok)
                val = float(v_tok)
            except ValueError:
                raise DataError(f"{matrix_path}: row {r + 1}: bad pair "
                                f"{c_tok!r} {v_tok!r}") from None
            if not 1 <= col <= ncols:
                raise DataError(
                    f"{matrix_path}: row {r + 1}: column {col} out of range 1..{ncols}"
                )
            indices.append(col - 1)
            data.append(val)
        indptr[r + 1] = len(indices)
    if len(data) != nnz:
        raise DataError(f"{matrix_path}: header declares {nnz} nonzeros, "
                        f"found {len(data)}")

    try:
        with open(labels_path, encoding="utf-8") as fh:
            names = [ln.strip() for ln in fh if ln.strip() != ""]
    except OSError as exc:
        raise DataError(str(exc)) from None
    if len(names) != nrows:
        raise DataError(
            f"{labels_path}: {len(names)} labels for {nrows} matrix rows"
        )
    labels: list[str] = []
    label_ids: dict[str, int] = {}
    y = np.empty(nrows, dtype=np.int64)
    for i, name in enumerate(names):
        if name not in label_ids:
            label_ids[name] = len(labels)
            labels.append(name)
        y[i] = label_ids[name]

    x = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64),
         np.asarray(indices, dtype=np.int32), indptr),
        shape=(nrows, ncols),
    )
    return Dataset(FeatureSchema.numeric(ncols), x, y, tuple(labels))


def write_csv(ds: Dataset, path, label_column: str = "label") -> None:
    """Write a dataset back out as CSV (ordinal codes decoded to categories)."""
    x = ds.x.toarray() if ds.is_sparse else ds.x
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.schema.names) + [label_column])
        for i in range(ds.n_instances):
            row = []
            for j, spec in enumerate(ds.schema.features):
                v = x[i, j]
                if spec.kind == ORDINAL:
                    row.append(spec.categories[int(round(v))])
                else:
                    row.append(repr(float(v)))
            row.append(ds.labels[ds.y[i]])
            writer.writerow(row)


def write_sparse(ds: Dataset, matrix_path, labels_path) -> None:
    """Write a dataset in the sparse text format (1-based column indices)."""
    csr = ds.x.tocsr() if ds.is_sparse else sp.csr_matrix(ds.x)
    with open(matrix_path, "w", encoding="utf-8") as fh:
        fh.write(f"{csr.shape[0]} {csr.shape[1]} {csr.nnz}\n")
        for i in range(csr.shape[0]):
            lo, hi = csr.indptr[i], csr.indptr[i + 1]
            pairs = (
                f"{col + 1} {repr(float(val))}"
                for col, val in zip(csr.indices[lo:hi], csr.data[lo:hi])
            )
            fh.write(" ".join(pairs) + "\n")
    with open(labels_path, "w", encoding="utf-8") as fh:
        for yi in ds.y:
            fh.write(ds.labels[yi] + "\n")


# ---------------------------------------------------------------------------
# Splitting and class statistics


def split_indices(
    ds: Dataset, train_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test row indices (sorted ascending, deterministic).

    Per class, ``round(train_fraction * count)`` rows go to train and the
    remainder to test, with at least one test row forced per class.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0,1), got {train_fraction}")
    counts = ds.class_counts()
    thin = [ds.labels[c] for c in np.nonzero(counts < 2)[0]]
    if thin:
        raise DataError(f"cannot stratify: class(es) with < 2 instances: {thin}")
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for c in range(ds.n_classes):
        rows = np.nonzero(ds.y == c)[0]
        rows = rows[rng.permutation(rows.size)]
        n_train = round_half_up(train_fraction * rows.size)
        if n_train >= rows.size:  # every class keeps >= 1 test instance
            n_train = rows.size - 1
        train_parts.append(rows[:n_train])
        test_parts.append(rows[n_train:])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    return train, test


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split into (train, test) datasets; see :func:`split_indices`."""
    train_idx, test_idx = split_indices(ds, train_fraction, seed)
    return ds.take(train_idx), ds.take(test_idx)


@dataclass(frozen=True)
class ClassStats:
    """Per-class counts and the majority/minority partition.

    A class is majority iff its count strictly exceeds the balance point
    ``total / n_classes``; ties are minority.
    """

    labels: tuple[str, ...]
    counts: tuple[int, ...]
    total: int
    n_classes: int
    balance_point: float
    majority: tuple[int, ...]
    minority: tuple[int, ...]

    def __post_init__(self):
        if set(self.majority) & set(self.minority):
            raise DataError("majority and minority overlap")
        if sorted(self.majority + self.minority) != list(range(self.n_classes)):
            raise DataError("majority/minority must partition the label set")
        if sum(self.counts) != self.total:
            raise DataError("counts do not sum to total")

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "counts": list(self.counts),
            "total": self.total,
            "n_classes": self.n_classes,
            "balance_point": self.balance_point,
            "majority": list(self.majority),
            "minority": list(self.minority),
        }

    @staticmethod
    def from_dict(doc: dict) -> "ClassStats":
        return ClassStats(
            labels=tuple(doc["labels"]),
            counts=tuple(doc["counts"]),
            total=doc["total"],
            n_classes=doc["n_classes"],
            balance_point=doc["balance_point"],
            majority=tuple(doc["majority"]),
            minority=tuple(doc["minority"]),
        )

    def describe(self) -> str:
        lines = [
            f"instances: {self.total}   classes: {self.n_classes}   "
            f"balance point: {self.balance_point:.2f}"
        ]
        for c in range(self.n_classes):
            side = "majority" if c in self.majority else "minority"
            share = 100.0 * self.counts[c] / self.total if self.total else 0.0
            lines.append(
                f"  [{c}] {self.labels[c]}: {self.counts[c]} ({share:.2f}%) {side}"
            )
        return "\n".join(lines)


def class_stats(
    ds: Dataset, override_majority: Optional[Iterable[Union[int, str]]] = None
) -> ClassStats:
    """Profile class skew; ``override_majority`` replaces the threshold rule."""
    if ds.n_instances == 0:
        raise DataError("empty dataset")
    counts = ds.class_counts()
    total = int(counts.sum())
    k = ds.n_classes
    balance_point = total / k
    if override_majority is not None:
        majority = set()
        for item in override_majority:
            if isinstance(item, str):
                if item not in ds.labels:
                    raise DataError(f"override references unknown label {item!r}")
                majority.add(ds.labels.index(item))
            else:
                if not 0 <= int(item) < k:
                    raise DataError(f"override references unknown label id {item}")
                majority.add(int(item))
    else:
        majority = {c for c in range(k) if counts[c] > balance_point}
    minority = tuple(c for c in range(k) if c not in majority)
    return ClassStats(
        labels=ds.labels,
        counts=tuple(int(v) for v in counts),
        total=total,
        n_classes=k,
        balance_point=balance_point,
        majority=tuple(sorted(majority)),
        minority=minority,
    )


# ---------------------------------------------------------------------------
# Label-space views


@dataclass(frozen=True)
class LabelView:
    """A transformation of the label space.

    ``mapping[orig_id]`` is the view label id.  Cluster pseudo-labels come
    first in ``view_labels`` (for the binary view: majority cluster at slot 0,
    minority cluster at slot 1), then remaining labels in original order,
    which fixes argmax tie-breaking deterministically.  ``cluster_slot`` is
    the pseudo-label slot (the minority side for the binary view).
    """

    kind: str
    view_labels: tuple[str, ...]
    mapping: np.ndarray
    cluster_slot: Optional[int] = None

    def __post_init__(self):
        self.mapping.setflags(write=False)

    @property
    def n_view_labels(self) -> int:
        return len(self.view_labels)

    def originals_for(self, view_label: int) -> tuple[int, ...]:
        """Original label ids mapped onto one view label."""
        return tuple(int(i) for i in np.nonzero(self.mapping == view_label)[0])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "view_labels": list(self.view_labels),
            "mapping": self.mapping.tolist(),
            "cluster_slot": self.cluster_slot,
        }

    @staticmethod
    def from_dict(doc: dict) -> "LabelView":
        return LabelView(
            kind=doc["kind"],
            view_labels=tuple(doc["view_labels"]),
            mapping=np.asarray(doc["mapping"], dtype=np.int64),
            cluster_slot=doc["cluster_slot"],
        )


def make_view(stats: ClassStats, kind: str) -> LabelView:
    """Build a label view from class statistics.

    ``binary`` needs a non-empty majority set, ``min_cluster`` needs majority
    classes to cluster, ``maj_cluster`` needs minority classes.
    """
    if kind not in VIEW_KINDS:
        raise DataError(f"unknown view kind {kind!r} (expected one of {VIEW_KINDS})")
    k = stats.n_classes
    mapping = np.empty(k, dtype=np.int64)
    if kind == FULL:
        return LabelView(FULL, stats.labels, np.arange(k, dtype=np.int64), None)
    if kind == BINARY:
        if not stats.majority:
            raise DataError("binary view requires at least one majority class")
        if not stats.minority:
            raise DataError("binary view requires at least one minority class")
        mapping[:] = 1
        mapping[list(stats.majority)] = 0
        return LabelView(
            BINARY, (MAJORITY_CLUSTER_LABEL, MINORITY_CLUSTER_LABEL), mapping, 1
        )
    if kind == MAJ_CLUSTER:
        if not stats.minority:
            raise DataError("maj_cluster view requires at least one minority class")
        if not stats.majority:
            raise DataError("maj_cluster view requires at least one majority class")
        mapping[list(stats.majority)] = 0
        names = [MAJORITY_CLUSTER_LABEL]
        for slot, c in enumerate(stats.minority, start=1):
            mapping[c] = slot
            names.append(stats.labels[c])
        return LabelView(MAJ_CLUSTER, tuple(names), mapping, 0)
    # MIN_CLUSTER
    if not stats.majority:
        raise DataError("min_cluster view requires at least one majority class")
    if not stats.minority:
        raise DataError("min_cluster view requires at least one minority class")
    mapping[list(stats.minority)] = 0
    names = [MINORITY_CLUSTER_LABEL]
    for slot, c in enumerate(stats.majority, start=1):
        mapping[c] = slot
        names.append(stats.labels[c])
    return LabelView(MIN_CLUSTER, tuple(names), mapping, 0)


def apply_view(ds: Dataset, view: LabelView) -> Dataset:
    """Relabel a dataset through a view; features are shared, not copied."""
    if len(view.mapping) != ds.n_classes:
        raise DataError(
            f"view maps {len(view.mapping)} labels, dataset has {ds.n_classes}"
        )
    if view.kind == FULL:
        return ds
    return Dataset(ds.schema, ds.x, view.mapping[ds.y], view.view_labels)
