"""Shared fixtures.

The screening-table fixture prefers the real fetched CSV at
data/breast_cancer.csv and otherwise falls back to the deterministic
synthetic surrogate with the same schema and published profile; every
test that depends on it reports which source it ran against.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from stabforest.data import Dataset, load_csv
from stabforest.synthetic import planted_dataset, write_screening_csv

REPO_ROOT = Path(__file__).resolve().parents[1]
REAL_BC = REPO_ROOT / "data" / "breast_cancer.csv"
SURROGATE_BC = REPO_ROOT / "data" / "breast_cancer_surrogate.csv"
SURROGATE_SEED = 97


def breast_cancer_source() -> tuple[Path, str]:
    """Path and provenance of the screening-table CSV used by the suite."""
    if REAL_BC.exists():
        return REAL_BC, "uci"
    if not SURROGATE_BC.exists():
        write_screening_csv(SURROGATE_BC, seed=SURROGATE_SEED)
    return SURROGATE_BC, "surrogate"


@pytest.fixture(scope="session")
def bc_source():
    return breast_cancer_source()


@pytest.fixture(scope="session")
def breast_cancer(bc_source):
    """(dataset, profile, source) for the screening-table benchmarks."""
    path, source = bc_source
    dataset, profile = load_csv(path, label_column="class")
    return dataset, profile, source


@pytest.fixture(scope="session")
def planted_small():
    """Cheap strongly-separable planted dataset for fold-level tests."""
    return planted_dataset(40, 2, 3, seed=101, margin=4.0)


@pytest.fixture(scope="session")
def planted_medium():
    """200-row planted dataset matching the importance-recovery setup."""
    return planted_dataset(200, 5, 15, seed=77, margin=2.0)


def prefix_recompute_stability(records, k: int, p: int):
    """Stability iteration by full per-prefix recomputation (oracle).

    Independent of the incremental implementation: for every trial
    index t it rebuilds all subject tallies and the group ranking from
    scratch using only records with trial <= t.
    """
    from stabforest.trials import group_ranking, subject_result_from_records

    t_max = max(r.trial for r in records)
    sets = []
    for t in range(t_max + 1):
        prefix = [r for r in records if r.trial <= t]
        by_subject = {}
        for r in prefix:
            by_subject.setdefault(r.subject, []).append(r)
        rankings = []
        for s in sorted(by_subject):
            res = subject_result_from_records(by_subject[s], k, p)
            if res.ranking:
                rankings.append(res.ranking)
        if rankings:
            _, group = group_ranking(rankings, k, p)
            sets.append(frozenset(group))
        else:
            sets.append(frozenset())
    final = sets[-1]
    t_star = t_max
    while t_star > 0 and sets[t_star - 1] == final:
        t_star -= 1
    if t_star == t_max and t_max > 0:
        return None
    return t_star


def make_dataset(features, labels, subjects=None, names=None) -> Dataset:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int8)
    n, p = features.shape
    if subjects is None:
        subjects = np.arange(n)
        n_subjects = n
    else:
        subjects = np.asarray(subjects)
        n_subjects = int(subjects.max()) + 1
    names = tuple(names) if names else tuple(f"f{j}" for j in range(p))
    return Dataset(
        features=features,
        labels=labels,
        feature_names=names,
        subject_ids=subjects,
        n_subjects=n_subjects,
    )
