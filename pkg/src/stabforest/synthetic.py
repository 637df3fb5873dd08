"""Deterministic synthetic datasets.

Two families: planted-feature data, where a known subset of columns
carries all class signal (ground truth for importance-recovery tests),
and a mixed ordinal/continuous table used by the benchmark harness.
All draws come from this package's own stream, so a (shape, seed) pair
pins the dataset bit-for-bit on every platform.
"""

from __future__ import annotations

import math

import numpy as np

from .data import Dataset
from .rng import Stream


def _uniform(stream: Stream) -> float:
    # 53-bit mantissa draw in [0, 1)
    return (stream.next_u64() >> 11) * (1.0 / (1 << 53))


def _gauss(stream: Stream) -> float:
    # Box-Muller; one value per call keeps the draw order obvious
    u1 = _uniform(stream)
    u2 = _uniform(stream)
    while u1 <= 1e-300:
        u1 = _uniform(stream)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def planted_dataset(
    n_rows: int,
    n_informative: int,
    n_noise: int,
    seed: int,
    margin: float = 2.0,
    separating: bool = False,
) -> Dataset:
    """Binary dataset where only the first ``n_informative`` columns matter.

    Informative column j for a row of class y is ``(y - 0.5) * margin``
    plus unit Gaussian noise; noise columns are pure unit Gaussians.
    With ``separating=True`` the informative columns use bounded noise
    (uniform in ±0.4·margin) so the classes never overlap on them.
    Labels alternate, so classes are balanced and every prefix of rows
    contains both.
    """
    if n_informative < 1 or n_rows < 4:
        raise ValueError("need n_informative >= 1 and n_rows >= 4")
    stream = Stream(seed)
    p = n_informative + n_noise
    features = np.empty((n_rows, p), dtype=np.float64)
    labels = np.empty(n_rows, dtype=np.int8)
    for r in range(n_rows):
        y = r % 2
        labels[r] = y
        centre = (y - 0.5) * margin
        for j in range(p):
            if j < n_informative:
                if separating:
                    features[r, j] = centre + (0.8 * _uniform(stream) - 0.4) * margin
                else:
                    features[r, j] = centre + _gauss(stream)
            else:
                features[r, j] = _gauss(stream)
    names = [f"signal_{j}" for j in range(n_informative)]
    names += [f"noise_{j}" for j in range(n_noise)]
    return Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(names),
        subject_ids=np.arange(n_rows, dtype=np.int64),
        n_subjects=n_rows,
    )


def tabular_dataset(n_rows: int, seed: int, n_ordinal: int = 3, n_continuous: int = 7) -> Dataset:
    """Mixed ordinal/continuous benchmark table with a learnable label.

    Ordinal columns take integer grades 0..9; continuous columns are
    Gaussian. The label thresholds a noisy linear score of a few
    columns, giving accuracies well away from both 0.5 and 1.0.
    """
    stream = Stream(seed)
    p = n_ordinal + n_continuous
    features = np.empty((n_rows, p), dtype=np.float64)
    labels = np.empty(n_rows, dtype=np.int8)
    for r in range(n_rows):
        for j in range(n_ordinal):
            features[r, j] = stream.randbelow(10)
        for j in range(n_ordinal, p):
            features[r, j] = _gauss(stream)
        score = (
            0.35 * (features[r, 0] - 4.5)
            + 1.2 * features[r, n_ordinal]
            + 0.8 * features[r, n_ordinal + 1]
            + 1.1 * _gauss(stream)
        )
        labels[r] = 1 if score > 0.0 else 0
    if len(np.unique(labels)) < 2:  # pragma: no cover - flat score would need a broken seed
        labels[0] = 1 - labels[0]
    names = [f"grade_{j}" for j in range(n_ordinal)]
    names += [f"meas_{j}" for j in range(n_continuous)]
    return Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(names),
        subject_ids=np.arange(n_rows, dtype=np.int64),
        n_subjects=n_rows,
    )


#: Column layout of the cytology-style screening table written by
#: :func:`write_screening_csv` (and by docs/fetch_datasets.py).
SCREENING_COLUMNS = (
    "clump_thickness",
    "uniformity_cell_size",
    "uniformity_cell_shape",
    "marginal_adhesion",
    "single_epithelial_cell_size",
    "bare_nuclei",
    "bland_chromatin",
    "normal_nucleoli",
    "mitoses",
    "class",
)

# Per-feature grade profiles: (benign tail scale, malignant mean, malignant sd).
# Graded 1..10; the benign population hugs the low grades with a thin tail,
# the malignant population is broad and high except for the mitoses column.
_SCREENING_PROFILE = (
    (0.85, 7.2, 2.4),
    (0.45, 6.6, 2.7),
    (0.50, 6.6, 2.6),
    (0.45, 5.6, 3.2),
    (0.70, 5.3, 2.4),
    (0.50, 7.7, 3.1),
    (0.75, 5.9, 2.2),
    (0.45, 5.9, 3.1),
    (0.25, 2.6, 2.2),
)


def _benign_grade(stream: Stream, scale: float) -> int:
    v = 1 + int(-math.log(max(_uniform(stream), 1e-12)) * scale)
    return min(v, 10)


def _malignant_grade(stream: Stream, mean: float, sd: float) -> int:
    v = int(round(mean + sd * _gauss(stream)))
    return min(max(v, 1), 10)


def screening_rows(seed: int, n_rows: int = 699, n_positive: int = 241, n_missing: int = 16):
    """Rows of a screening table with the published shape of the
    701-case cytology benchmark family: grades 1..10 in nine columns,
    labels 2 (negative) / 4 (positive), and a handful of rows missing
    the bare-nuclei grade.

    A fraction of each class is drawn from the opposite class's
    profile (attenuated), which keeps ensemble accuracy near 0.97
    rather than at 1. Returns a list of string rows (no header).
    """
    stream = Stream(seed)
    order = _permutation(stream, n_rows)
    positive = set(order[:n_positive])
    missing = set(order[n_rows - n_missing :])

    rows: list[list[str]] = []
    for r in range(n_rows):
        is_pos = r in positive
        # a thin slice of each class grades like the other, keeping
        # ensemble accuracy near 0.97 rather than at 1
        hard = _uniform(stream) < (0.045 if not is_pos else 0.03)
        values: list[int] = []
        for scale, mu, sd in _SCREENING_PROFILE:
            if is_pos != hard:
                values.append(_malignant_grade(stream, mu * (0.62 if hard else 1.0), sd))
            else:
                values.append(_benign_grade(stream, scale * (2.2 if hard else 1.0)))
        cells = [str(v) for v in values]
        if r in missing:
            cells[5] = "?"
        cells.append("4" if is_pos else "2")
        rows.append(cells)
    return rows


def _permutation(stream: Stream, n: int) -> list[int]:
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = stream.randbelow(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def write_screening_csv(path, seed: int = 97) -> None:
    """Write the synthetic screening table as a loader-ready CSV."""
    import csv

    rows = screening_rows(seed)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCREENING_COLUMNS)
        writer.writerows(rows)
