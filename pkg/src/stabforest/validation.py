"""Baseline validation schemes: holdout split, k-fold, leave-one-subject-out.

Every fold trains its own forest, seeded from the scheme seed and the
fold's position via the same derivation the randomized-trials protocol
uses with trial 0, so a LOSO baseline and trial 0 of the protocol train
identical forests. Reports carry pooled metrics, per-fold confusion
matrices and importance vectors, and the full prediction vector.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import DataError, Dataset, split_indices, split_train_test, subject_partition
from .forest import (
    ForestConfig,
    ImportanceVector,
    compute_importance,
    predict,
    train_forest,
)
from .rng import derive_trial_seed, shuffle

HOLDOUT = "holdout"
KFOLD = "kfold"
LOSO = "loso"
LOOCV = "loocv"
SCHEMES = (HOLDOUT, KFOLD, LOSO, LOOCV)


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            self.tp + other.tp,
            self.fp + other.fp,
            self.tn + other.tn,
            self.fn + other.fn,
        )

    @classmethod
    def from_predictions(cls, predicted, actual) -> "ConfusionMatrix":
        predicted = np.asarray(predicted)
        actual = np.asarray(actual)
        return cls(
            tp=int(((predicted == 1) & (actual == 1)).sum()),
            fp=int(((predicted == 1) & (actual == 0)).sum()),
            tn=int(((predicted == 0) & (actual == 0)).sum()),
            fn=int(((predicted == 0) & (actual == 1)).sum()),
        )

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def compute_metrics(cm: ConfusionMatrix) -> tuple[float, float, bool]:
    """(accuracy, balanced accuracy, partial flag).

    Balanced accuracy averages sensitivity and specificity; when one
    class has no actual members its term is undefined, the defined term
    alone is reported and the partial flag is set.
    """
    if cm.total == 0:
        raise ValidationError("empty confusion matrix")
    accuracy = (cm.tp + cm.tn) / cm.total
    terms = []
    if cm.tp + cm.fn > 0:
        terms.append(cm.tp / (cm.tp + cm.fn))
    if cm.tn + cm.fp > 0:
        terms.append(cm.tn / (cm.tn + cm.fp))
    balanced = sum(terms) / len(terms)
    return accuracy, balanced, len(terms) < 2


@dataclass(frozen=True)
class FoldResult:
    fold_id: int
    cm: ConfusionMatrix
    importance: ImportanceVector
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    scheme: str
    seed: int
    accuracy: float
    balanced_accuracy: float
    per_fold: tuple[FoldResult, ...]
    predictions: np.ndarray  # per original row; -1 where the fold was skipped
    mean_importance: ImportanceVector
    wall_time_ms: float
    warnings: tuple[str, ...] = ()
    skipped_folds: int = 0

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "per_fold": [
                {
                    "fold_id": f.fold_id,
                    "confusion": f.cm.to_dict(),
                    "importance": [float(v) for v in f.importance.scores],
                    "flags": list(f.flags),
                }
                for f in self.per_fold
            ],
            "predictions": [int(v) for v in self.predictions],
            "mean_importance": [float(v) for v in self.mean_importance.scores],
            "importance_method": self.mean_importance.method,
            "wall_time_ms": self.wall_time_ms,
            "warnings": list(self.warnings),
            "skipped_folds": self.skipped_folds,
        }


def _mean_importance(folds: list[FoldResult], method: str, p: int) -> ImportanceVector:
    if not folds:
        return ImportanceVector(scores=np.zeros(p), method=method)
    scores = np.mean([f.importance.scores for f in folds], axis=0)
    return ImportanceVector(scores=scores, method=method)


def holdout_validate(
    dataset: Dataset,
    config: ForestConfig,
    seed: int,
    test_fraction: float = 0.2,
) -> ValidationReport:
    """One seeded train/test split, one forest, one report."""
    start = time.perf_counter()
    train, test, warnings_ = split_train_test(dataset, test_fraction, seed)
    forest = train_forest(train, config, derive_trial_seed(seed, 0, 0))
    predicted = predict(forest, test.features)
    cm = ConfusionMatrix.from_predictions(predicted, test.labels)
    importance = compute_importance(forest, train)
    accuracy, balanced, partial = compute_metrics(cm)
    if partial:
        warnings_ = list(warnings_) + ["metrics partial: one class absent in test"]
    predictions = np.full(dataset.n_rows, -1, dtype=np.int8)
    _, test_idx = split_indices(dataset.n_rows, test_fraction, seed)
    predictions[test_idx] = predicted
    fold = FoldResult(fold_id=0, cm=cm, importance=importance)
    return ValidationReport(
        scheme=HOLDOUT,
        seed=seed,
        accuracy=accuracy,
        balanced_accuracy=balanced,
        per_fold=(fold,),
        predictions=predictions,
        mean_importance=_mean_importance([fold], importance.method, dataset.n_features),
        wall_time_ms=(time.perf_counter() - start) * 1000.0,
        warnings=tuple(warnings_),
    )


def _fold_slices(n: int, k: int) -> list[tuple[int, int]]:
    """k contiguous slice bounds of sizes floor(n/k) or ceil(n/k)."""
    base, extra = divmod(n, k)
    bounds = []
    startpos = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        bounds.append((startpos, startpos + size))
        startpos += size
    return bounds


def kfold_validate(
    dataset: Dataset, config: ForestConfig, seed: int, k: int = 10
) -> ValidationReport:
    """Seed-shuffled contiguous k folds, pooled confusion matrix.

    With k == n_rows the shuffle is skipped (every fold is one row
    either way) and fold f holds exactly row f, which makes the
    prediction vector identical to LOSO under default subject mapping.
    """
    n = dataset.n_rows
    if not 2 <= k <= n:
        raise ValidationError(f"k must be in [2, {n}]")
    start = time.perf_counter()
    order = np.arange(n, dtype=np.int64) if k == n else shuffle(n, seed)
    folds: list[FoldResult] = []
    warnings_: list[str] = []
    predictions = np.full(n, -1, dtype=np.int8)
    pooled = ConfusionMatrix()
    skipped = 0
    for f, (lo, hi) in enumerate(_fold_slices(n, k)):
        test_idx = np.sort(order[lo:hi])
        train_idx = np.sort(np.concatenate([order[:lo], order[hi:]]))
        flags: list[str] = []
        if len(np.unique(dataset.labels[test_idx])) < 2:
            flags.append("single-class fold")
        train = dataset.subset(train_idx)
        test = dataset.subset(test_idx)
        forest = train_forest(train, config, derive_trial_seed(seed, f, 0))
        predicted = predict(forest, test.features)
        cm = ConfusionMatrix.from_predictions(predicted, test.labels)
        importance = compute_importance(forest, train)
        predictions[test_idx] = predicted
        pooled = pooled + cm
        folds.append(FoldResult(fold_id=f, cm=cm, importance=importance, flags=tuple(flags)))
        if flags:
            warnings_.append(f"fold {f}: " + "; ".join(flags))
    accuracy, balanced, partial = compute_metrics(pooled)
    if partial:
        warnings_.append("metrics partial: one class absent overall")
    method = folds[0].importance.method
    return ValidationReport(
        scheme=KFOLD,
        seed=seed,
        accuracy=accuracy,
        balanced_accuracy=balanced,
        per_fold=tuple(folds),
        predictions=predictions,
        mean_importance=_mean_importance(folds, method, dataset.n_features),
        wall_time_ms=(time.perf_counter() - start) * 1000.0,
        warnings=tuple(warnings_),
        skipped_folds=skipped,
    )


def loso_validate(
    dataset: Dataset, config: ForestConfig, seed: int, scheme_name: str = LOSO
) -> ValidationReport:
    """One fold per subject; fold s trains with seed derived from
    (seed, s, trial=0). Degenerate folds are flagged and skipped."""
    if dataset.n_subjects < 2:
        raise ValidationError("need at least 2 subjects")
    start = time.perf_counter()
    folds: list[FoldResult] = []
    warnings_: list[str] = []
    predictions = np.full(dataset.n_rows, -1, dtype=np.int8)
    pooled = ConfusionMatrix()
    skipped = 0
    for s in range(dataset.n_subjects):
        try:
            train, holdout = subject_partition(dataset, s)
        except DataError:
            skipped += 1
            warnings_.append(f"subject {s}: degenerate LOSO fold skipped")
            continue
        forest = train_forest(train, config, derive_trial_seed(seed, s, 0))
        predicted = predict(forest, holdout.features)
        cm = ConfusionMatrix.from_predictions(predicted, holdout.labels)
        importance = compute_importance(forest, train)
        predictions[dataset.subject_ids == s] = predicted
        pooled = pooled + cm
        folds.append(FoldResult(fold_id=s, cm=cm, importance=importance))
    if not folds:
        raise ValidationError("all LOSO folds are degenerate")
    accuracy, balanced, partial = compute_metrics(pooled)
    if partial:
        warnings_.append("metrics partial: one class absent overall")
    method = folds[0].importance.method
    return ValidationReport(
        scheme=scheme_name,
        seed=seed,
        accuracy=accuracy,
        balanced_accuracy=balanced,
        per_fold=tuple(folds),
        predictions=predictions,
        mean_importance=_mean_importance(folds, method, dataset.n_features),
        wall_time_ms=(time.perf_counter() - start) * 1000.0,
        warnings=tuple(warnings_),
        skipped_folds=skipped,
    )


def loocv_validate(dataset: Dataset, config: ForestConfig, seed: int) -> ValidationReport:
    """Leave-one-out: LOSO over a row-per-subject view of the data."""
    return loso_validate(dataset.with_row_subjects(), config, seed, scheme_name=LOOCV)


def run_scheme(
    dataset: Dataset,
    scheme: str,
    config: ForestConfig,
    seed: int,
    k: int = 10,
    test_fraction: float = 0.2,
) -> ValidationReport:
    if scheme == HOLDOUT:
        return holdout_validate(dataset, config, seed, test_fraction)
    if scheme == KFOLD:
        return kfold_validate(dataset, config, seed, k)
    if scheme == LOSO:
        return loso_validate(dataset, config, seed)
    if scheme == LOOCV:
        return loocv_validate(dataset, config, seed)
    raise ValidationError(f"unknown scheme {scheme!r}")
