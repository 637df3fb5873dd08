"""CSV ingestion and row partitioning.

A loaded dataset is an immutable numeric matrix with binary labels and a
subject index per row. Categorical columns are integer-encoded at load
time; incomplete rows are dropped and counted. By default every row is
its own subject, which makes leave-one-subject-out coincide with
leave-one-out.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np

from .rng import shuffle

DEFAULT_NA_TOKENS = ("", "NA", "?")


class DataError(ValueError):
    """Raised for malformed input data or invalid partitions."""


@dataclass(frozen=True)
class DatasetProfile:
    """Shape summary recorded at load time."""

    n_rows: int
    n_features: int
    n_ordinals: int
    total_cardinality: int
    n_dropped_rows: int


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with binary labels and subject grouping.

    ``subject_ids`` maps each row to an index in [0, n_subjects); the
    default mapping gives every row its own subject.
    """

    features: np.ndarray  # float64, shape (n_rows, n_features)
    labels: np.ndarray  # int8 in {0, 1}, shape (n_rows,)
    feature_names: tuple[str, ...]
    subject_ids: np.ndarray  # int64, shape (n_rows,)
    n_subjects: int
    label_values: tuple[str, str] = ("0", "1")

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int8)
        subjects = np.ascontiguousarray(self.subject_ids, dtype=np.int64)
        for arr, name in ((features, "features"), (labels, "labels"), (subjects, "subject_ids")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if features.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        n_rows, n_features = features.shape
        if n_features < 2:
            raise DataError("need at least 2 features")
        if len(self.feature_names) != n_features:
            raise DataError("feature_names length must match feature count")
        if len(set(self.feature_names)) != n_features:
            raise DataError("duplicate feature names")
        if labels.shape != (n_rows,) or subjects.shape != (n_rows,):
            raise DataError("labels/subject_ids must have one entry per row")
        if not np.isfinite(features).all():
            raise DataError("features contain non-finite values")
        # Single-class Datasets are legal (e.g. a one-subject holdout);
        # training rejects them separately.
        if labels.size and not set(np.unique(labels)) <= {0, 1}:
            raise DataError("labels must be 0/1")
        if subjects.min() < 0 or subjects.max() >= self.n_subjects:
            raise DataError("subject index out of range")
        counts = np.bincount(subjects, minlength=self.n_subjects)
        if (counts == 0).any():
            raise DataError("every subject must own at least one row")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def _encoded(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rank-code matrix used by the tree kernels.

        Returns (cc, bin_offsets, bin_values) where ``cc[r, f] =
        2 * code + label`` and ``code`` is the rank of ``features[r, f]``
        among the sorted distinct values of column f (stored in
        ``bin_values[bin_offsets[f]:bin_offsets[f+1]]``). Folding the
        label into the low bit lets the kernels histogram and sort rows
        in a single pass; code order is the high bits, so threshold
        comparisons work on cc directly.
        """
        n_rows, n_features = self.features.shape
        cc32 = np.empty((n_rows, n_features), dtype=np.int32)
        offsets = np.zeros(n_features + 1, dtype=np.int64)
        values: list[np.ndarray] = []
        for f in range(n_features):
            vals, inv = np.unique(self.features[:, f], return_inverse=True)
            cc32[:, f] = inv.astype(np.int32)
            values.append(vals)
            offsets[f + 1] = offsets[f] + len(vals)
        bin_values = np.concatenate(values) if values else np.empty(0)
        cc32 = cc32 * 2 + self.labels.astype(np.int32)[:, None]
        max_bins = int((offsets[1:] - offsets[:-1]).max()) if n_rows else 0
        # narrow dtypes keep the hot loops cache-resident
        if max_bins <= 127:
            cc = cc32.astype(np.uint8)
        elif max_bins <= 32767:
            cc = cc32.astype(np.uint16)
        else:
            cc = cc32
        cc = np.ascontiguousarray(cc)
        cc.setflags(write=False)
        return cc, offsets, bin_values.astype(np.float64)

    def subset(self, row_indices: np.ndarray, renumber_subjects: bool = True) -> "Dataset":
        """New Dataset from a row selection (original row order preserved)."""
        idx = np.asarray(row_indices, dtype=np.int64)
        subjects = self.subject_ids[idx]
        if renumber_subjects:
            uniq, subjects = np.unique(subjects, return_inverse=True)
            n_subjects = len(uniq)
        else:
            n_subjects = self.n_subjects
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            feature_names=self.feature_names,
            subject_ids=subjects,
            n_subjects=n_subjects,
            label_values=self.label_values,
        )

    def with_row_subjects(self) -> "Dataset":
        """Copy of this dataset where each row is its own subject."""
        return Dataset(
            features=self.features,
            labels=self.labels,
            feature_names=self.feature_names,
            subject_ids=np.arange(self.n_rows, dtype=np.int64),
            n_subjects=self.n_rows,
            label_values=self.label_values,
        )


def _is_float_token(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def load_csv(
    path,
    label_column: str,
    subject_column: Optional[str] = None,
    ordinal_spec: Optional[Mapping[str, Sequence[str]]] = None,
    na_tokens: Sequence[str] = DEFAULT_NA_TOKENS,
) -> tuple[Dataset, DatasetProfile]:
    """Load a header-first CSV into a Dataset plus its profile.

    Rows containing a missing cell (any token in ``na_tokens``) are
    dropped and counted. Non-numeric columns are integer-encoded, in
    ``ordinal_spec`` order when given and lexicographic order otherwise.
    The two raw label values map to {0, 1} in lexicographic order.
    """
    ordinal_spec = dict(ordinal_spec or {})
    na = set(na_tokens)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [[cell.strip() for cell in row] for row in reader if row]

    if len(set(header)) != len(header):
        raise DataError("duplicate feature names in header")
    if label_column not in header:
        raise DataError(f"missing label column {label_column!r}")
    if subject_column is not None and subject_column not in header:
        raise DataError(f"missing subject column {subject_column!r}")
    for col in ordinal_spec:
        if col not in header:
            raise DataError(f"ordinal spec names unknown column {col!r}")

    n_dropped = 0
    complete: list[list[str]] = []
    for row in rows:
        if len(row) != len(header):
            raise DataError("row length does not match header")
        if any(cell in na for cell in row):
            n_dropped += 1
        else:
            complete.append(row)
    if not complete:
        raise DataError("no complete rows after dropping missing values")

    label_idx = header.index(label_column)
    subject_idx = header.index(subject_column) if subject_column else None
    feature_cols = [
        i for i in range(len(header)) if i != label_idx and i != subject_idx
    ]

    # binary check on the raw column: dropping incomplete rows may
    # legitimately leave a single class behind
    classes = sorted({row[label_idx] for row in rows if row[label_idx] not in na})
    if len(classes) != 2:
        raise DataError(f"label not binary: {len(classes)} distinct values")
    labels = np.array([classes.index(row[label_idx]) for row in complete], dtype=np.int8)

    n_rows = len(complete)
    features = np.empty((n_rows, len(feature_cols)), dtype=np.float64)
    n_ordinals = 0
    total_cardinality = 0
    for out_col, col in enumerate(feature_cols):
        name = header[col]
        cells = [row[col] for row in complete]
        if name in ordinal_spec:
            order = [str(c) for c in ordinal_spec[name]]
            mapping = {cat: rank for rank, cat in enumerate(order)}
            unseen = set(cells) - set(order)
            if unseen:
                raise DataError(f"column {name!r}: values outside ordinal spec: {sorted(unseen)}")
            features[:, out_col] = [mapping[c] for c in cells]
            n_ordinals += 1
            total_cardinality += len(set(cells))
        elif all(_is_float_token(c) for c in cells):
            features[:, out_col] = [float(c) for c in cells]
        else:
            mapping = {cat: rank for rank, cat in enumerate(sorted(set(cells)))}
            features[:, out_col] = [mapping[c] for c in cells]
            n_ordinals += 1
            total_cardinality += len(mapping)

    if subject_idx is not None:
        raw_subjects = [row[subject_idx] for row in complete]
        subject_order = sorted(set(raw_subjects))
        lookup = {s: i for i, s in enumerate(subject_order)}
        subject_ids = np.array([lookup[s] for s in raw_subjects], dtype=np.int64)
        n_subjects = len(subject_order)
    else:
        subject_ids = np.arange(n_rows, dtype=np.int64)
        n_subjects = n_rows

    dataset = Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(header[c] for c in feature_cols),
        subject_ids=subject_ids,
        n_subjects=n_subjects,
        label_values=(classes[0], classes[1]),
    )
    profile = DatasetProfile(
        n_rows=n_rows,
        n_features=len(feature_cols),
        n_ordinals=n_ordinals,
        total_cardinality=total_cardinality,
        n_dropped_rows=n_dropped,
    )
    return dataset, profile


def write_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    """Write a Dataset back to CSV (features then label; floats round-trip)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(train, test) row indices of a seeded shuffle split, both sorted.

    ``|test| = round(test_fraction * n)``, rounding half away from zero.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError("fraction out of range (0, 1)")
    n_test = int(test_fraction * n + 0.5)
    if n_test == 0 or n_test == n:
        raise DataError("split leaves an empty train or test set")
    perm = shuffle(n, seed)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def split_train_test(
    dataset: Dataset, test_fraction: float, seed: int
) -> tuple[Dataset, Dataset, list[str]]:
    """Deterministic shuffled train/test split.

    ``|test| = round(test_fraction * n_rows)`` (half away from zero).
    Returns (train, test, warnings); a single-class test split is
    reported as a warning, not an error.
    """
    train_idx, test_idx = split_indices(dataset.n_rows, test_fraction, seed)
    warnings: list[str] = []
    for name, idx in (("train", train_idx), ("test", test_idx)):
        if len(np.unique(dataset.labels[idx])) < 2:
            warnings.append(f"{name} split contains a single class")
    return dataset.subset(train_idx), dataset.subset(test_idx), warnings


def subject_partition(dataset: Dataset, subject: int) -> tuple[Dataset, Dataset]:
    """Split into (train = all other subjects, holdout = this subject)."""
    if not 0 <= subject < dataset.n_subjects:
        raise DataError(f"subject index {subject} out of range")
    mask = dataset.subject_ids == subject
    holdout_idx = np.flatnonzero(mask)
    train_idx = np.flatnonzero(~mask)
    if len(np.unique(dataset.labels[train_idx])) < 2:
        raise DataError("degenerate LOSO fold (single-class train set)")
    train = dataset.subset(train_idx)
    holdout = dataset.subset(holdout_idx)
    return train, holdout
