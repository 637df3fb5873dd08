"""Randomized-trials validation: repeated seeded LOSO with vote-stabilized
feature rankings.

For each subject, the model is retrained up to ``max_trials_per_subject``
times on the leave-one-subject-out split, each trial under a fresh seed
derived from (master seed, subject, trial). Trials that predict every
holdout row correctly contribute a ranked top-k feature ballot. Ballots
are aggregated per subject by Borda count, the per-subject rankings are
aggregated the same way into a group ranking, and the trial index after
which the cumulative group top-k set never changes again is reported as
the stability iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, subject_partition
from .forest import ForestConfig, ImportanceVector, TrialRunner
from .rng import derive_seed_grid, derive_trial_seed


class TrialsError(ValueError):
    pass


@dataclass(frozen=True)
class TrialsConfig:
    max_trials_per_subject: int = 400
    top_k: int = 5
    master_seed: int = 42
    early_stop_window: int = 50  # 0 disables early stopping
    forest: ForestConfig = field(default_factory=ForestConfig)

    def __post_init__(self) -> None:
        if self.max_trials_per_subject < 1:
            raise TrialsError("max_trials_per_subject must be >= 1")
        if self.top_k < 1:
            raise TrialsError("top_k must be >= 1")
        if self.early_stop_window < 0:
            raise TrialsError("early_stop_window must be >= 0")

    def to_dict(self) -> dict:
        return {
            "max_trials_per_subject": self.max_trials_per_subject,
            "top_k": self.top_k,
            "master_seed": self.master_seed,
            "early_stop_window": self.early_stop_window,
            "forest": self.forest.to_dict(),
        }


@dataclass(frozen=True)
class TrialRecord:
    subject: int
    trial: int
    seed: int
    correct: bool
    top_features: Optional[tuple[int, ...]]  # only when correct


@dataclass(frozen=True)
class VoteTally:
    """Borda weights and appearance counts per feature."""

    borda: np.ndarray  # float64, per feature
    membership: np.ndarray  # int64, per feature
    n_ballots: int

    def to_dict(self) -> dict:
        return {
            "borda": [float(v) for v in self.borda],
            "membership": [int(v) for v in self.membership],
            "n_ballots": self.n_ballots,
        }


@dataclass(frozen=True)
class SubjectResult:
    tally: VoteTally
    ranking: tuple[int, ...]  # empty when the subject was never correct
    trials_run: int
    trials_correct: int
    set_counts: dict[tuple[int, ...], int]  # exact top-k set -> occurrences


@dataclass(frozen=True)
class StabilityReport:
    config: TrialsConfig
    feature_names: tuple[str, ...]
    per_subject: tuple[SubjectResult, ...]
    group_tally: VoteTally
    group_ranking: tuple[int, ...]
    trial_accuracy: float
    majority_accuracy: float
    stability_iteration: Optional[int]  # None = "not reached"
    never_correct_subjects: tuple[int, ...]
    records: tuple[TrialRecord, ...]
    wall_time_ms: float
    warnings: tuple[str, ...] = ()

    def to_dict(self, include_records: bool = False) -> dict:
        doc = {
            "config": self.config.to_dict(),
            "feature_names": list(self.feature_names),
            "per_subject": [
                {
                    "subject": s,
                    "tally": res.tally.to_dict(),
                    "ranking": list(res.ranking),
                    "trials_run": res.trials_run,
                    "trials_correct": res.trials_correct,
                    "set_counts": {
                        ",".join(map(str, k)): v for k, v in sorted(res.set_counts.items())
                    },
                }
                for s, res in enumerate(self.per_subject)
            ],
            "group_tally": self.group_tally.to_dict(),
            "group_ranking": list(self.group_ranking),
            "group_ranking_names": [self.feature_names[i] for i in self.group_ranking],
            "trial_accuracy": self.trial_accuracy,
            "majority_accuracy": self.majority_accuracy,
            "stability_iteration": (
                self.stability_iteration
                if self.stability_iteration is not None
                else "not reached"
            ),
            "never_correct_subjects": list(self.never_correct_subjects),
            "wall_time_ms": self.wall_time_ms,
            "warnings": list(self.warnings),
        }
        if include_records:
            doc["records"] = [
                {
                    "subject": r.subject,
                    "trial": r.trial,
                    "seed": r.seed,
                    "correct": r.correct,
                    "top_features": list(r.top_features) if r.top_features else None,
                }
                for r in self.records
            ]
        return doc


def top_k_features(importance: ImportanceVector | np.ndarray, k: int) -> tuple[int, ...]:
    """Indices of the k highest scores, ties broken toward lower index."""
    scores = importance.scores if isinstance(importance, ImportanceVector) else importance
    scores = np.asarray(scores, dtype=np.float64)
    if k > len(scores):
        raise TrialsError("k exceeds feature count")
    order = np.argsort(-scores, kind="stable")
    return tuple(int(i) for i in order[:k])


def tally_votes(ballots: Sequence[Sequence[int]], k: int, n_features: int) -> VoteTally:
    """Borda tally: rank r (1-based) on a ballot earns weight k - r + 1;
    membership counts appearances."""
    borda = np.zeros(n_features, dtype=np.float64)
    membership = np.zeros(n_features, dtype=np.int64)
    for ballot in ballots:
        if len(ballot) > k:
            raise TrialsError("ballot longer than k")
        if len(set(ballot)) != len(ballot):
            raise TrialsError("ballot features must be distinct")
        for rank, feature in enumerate(ballot, start=1):
            borda[feature] += k - rank + 1
            membership[feature] += 1
    return VoteTally(borda=borda, membership=membership, n_ballots=len(ballots))


def subject_ranking(tally: VoteTally, k: int) -> tuple[int, ...]:
    """Top-k by descending Borda weight; ties by descending membership,
    then ascending feature index."""
    if tally.n_ballots < 1:
        raise TrialsError("no correct trials for subject")
    p = len(tally.borda)
    order = sorted(range(p), key=lambda f: (-tally.borda[f], -tally.membership[f], f))
    return tuple(order[: min(k, p)])


def group_ranking(
    rankings: Sequence[Sequence[int]], k: int, n_features: int
) -> tuple[VoteTally, tuple[int, ...]]:
    """Aggregate per-subject rankings: one ballot each, same Borda rule."""
    if not rankings:
        raise TrialsError("no subject rankings to aggregate")
    tally = tally_votes(rankings, k, n_features)
    return tally, subject_ranking(tally, k)


def run_subject_trials(
    dataset: Dataset,
    subject: int,
    config: TrialsConfig,
    runner: Optional[TrialRunner] = None,
    holdout_votes: Optional[np.ndarray] = None,
) -> list[TrialRecord]:
    """All trials for one subject.

    A trial is correct only if every holdout row is predicted right; a
    correct trial records the top-k features of the trial's importance
    vector. With a nonzero early-stop window, the loop ends once the
    subject's cumulative top-k set (empty until the first ballot) has
    stayed unchanged through that many consecutive trials. Counting all
    trials, not just correct ones, is what keeps a subject the model
    never gets right from burning the whole trial budget on an empty
    ballot box.

    ``holdout_votes`` (n_holdout_rows x 2), when given, accumulates the
    per-trial predicted classes for the majority-vote accuracy.
    """
    train, holdout = subject_partition(dataset, subject)
    if runner is None:
        runner = TrialRunner(train, holdout, config.forest)
    k = config.top_k
    if k > dataset.n_features:
        raise TrialsError("top_k exceeds feature count")

    records: list[TrialRecord] = []
    borda = np.zeros(dataset.n_features, dtype=np.float64)
    membership = np.zeros(dataset.n_features, dtype=np.int64)
    n_ballots = 0
    prev_set: frozenset[int] = frozenset()
    unchanged = 0
    for t in range(config.max_trials_per_subject):
        seed = derive_trial_seed(config.master_seed, subject, t)
        correct, holdout_classes, scores = runner.run(seed)
        if holdout_votes is not None:
            for i, cls in enumerate(holdout_classes):
                holdout_votes[i, cls] += 1
        if correct:
            top = top_k_features(scores, k)
            records.append(TrialRecord(subject, t, seed, True, top))
            for rank, feature in enumerate(top, start=1):
                borda[feature] += k - rank + 1
                membership[feature] += 1
            n_ballots += 1
            current = frozenset(
                subject_ranking(VoteTally(borda, membership, n_ballots), k)
            )
        else:
            records.append(TrialRecord(subject, t, seed, False, None))
            current = prev_set
        if current == prev_set:
            unchanged += 1
        else:
            unchanged = 0
        prev_set = current
        if config.early_stop_window and unchanged >= config.early_stop_window:
            break
    return records


def subject_result_from_records(
    records: Sequence[TrialRecord], k: int, n_features: int
) -> SubjectResult:
    ballots = [r.top_features for r in records if r.correct]
    tally = tally_votes(ballots, k, n_features)
    ranking = subject_ranking(tally, k) if ballots else ()
    set_counts: dict[tuple[int, ...], int] = {}
    for ballot in ballots:
        key = tuple(sorted(ballot))
        set_counts[key] = set_counts.get(key, 0) + 1
    return SubjectResult(
        tally=tally,
        ranking=ranking,
        trials_run=len(records),
        trials_correct=len(ballots),
        set_counts=set_counts,
    )


def stability_iteration(
    records: Sequence[TrialRecord], k: int, n_features: int
) -> Optional[int]:
    """Smallest trial index T such that for every t >= T the group top-k
    set from all correct records with trial <= t equals the final set.

    Returns None ("not reached") when the final set first appears only
    at the very last trial of a multi-trial run. Incremental per-trial
    update; the test suite checks it against full per-prefix
    recomputation.
    """
    if not records:
        raise TrialsError("no records")
    subjects = sorted({r.subject for r in records})
    sub_idx = {s: i for i, s in enumerate(subjects)}
    t_max = max(r.trial for r in records)

    by_trial: list[list[TrialRecord]] = [[] for _ in range(t_max + 1)]
    for r in records:
        if r.correct:
            by_trial[r.trial].append(r)

    n_sub = len(subjects)
    borda = np.zeros((n_sub, n_features), dtype=np.float64)
    membership = np.zeros((n_sub, n_features), dtype=np.int64)
    ballots = np.zeros(n_sub, dtype=np.int64)
    rankings: dict[int, tuple[int, ...]] = {}

    sets: list[frozenset[int]] = []
    for t in range(t_max + 1):
        for r in sorted(by_trial[t], key=lambda rec: rec.subject):
            i = sub_idx[r.subject]
            for rank, feature in enumerate(r.top_features, start=1):
                borda[i, feature] += k - rank + 1
                membership[i, feature] += 1
            ballots[i] += 1
            rankings[i] = subject_ranking(
                VoteTally(borda[i], membership[i], int(ballots[i])), k
            )
        if rankings:
            _, group = group_ranking(list(rankings.values()), k, n_features)
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


def run_randomized_trials(dataset: Dataset, config: TrialsConfig) -> StabilityReport:
    """The full protocol over every subject; deterministic given
    (dataset, config) regardless of scheduling."""
    if dataset.n_subjects < 2:
        raise TrialsError("need at least 2 subjects")
    if config.top_k > dataset.n_features:
        raise TrialsError("top_k exceeds feature count")
    start = time.perf_counter()
    warnings_: list[str] = []

    grid = derive_seed_grid(
        config.master_seed, dataset.n_subjects, config.max_trials_per_subject
    )
    n_distinct = len(np.unique(grid))
    if n_distinct != grid.size:
        warnings_.append(
            f"seed grid collision: {grid.size - n_distinct} duplicate seeds"
        )

    all_records: list[TrialRecord] = []
    per_subject: list[SubjectResult] = []
    majority_correct = 0
    majority_total = 0
    for s in range(dataset.n_subjects):
        train, holdout = subject_partition(dataset, s)
        runner = TrialRunner(train, holdout, config.forest)
        votes = np.zeros((holdout.n_rows, 2), dtype=np.int64)
        records = run_subject_trials(dataset, s, config, runner, votes)
        all_records.extend(records)
        per_subject.append(
            subject_result_from_records(records, config.top_k, dataset.n_features)
        )
        majority = (votes[:, 1] > votes[:, 0]).astype(np.int8)  # tie -> class 0
        majority_correct += int((majority == holdout.labels).sum())
        majority_total += holdout.n_rows

    # canonical order before any aggregation, so results are identical
    # however the subject/trial work was scheduled
    all_records.sort(key=lambda r: (r.subject, r.trial))

    never_correct = tuple(
        s for s, res in enumerate(per_subject) if res.trials_correct == 0
    )
    rankings = [res.ranking for res in per_subject if res.ranking]
    if not rankings:
        raise TrialsError("no subject was ever predicted correctly")
    group_tally, group_rank = group_ranking(
        rankings, config.top_k, dataset.n_features
    )
    trials_run = sum(res.trials_run for res in per_subject)
    trials_correct = sum(res.trials_correct for res in per_subject)
    t_star = stability_iteration(all_records, config.top_k, dataset.n_features)
    return StabilityReport(
        config=config,
        feature_names=dataset.feature_names,
        per_subject=tuple(per_subject),
        group_tally=group_tally,
        group_ranking=group_rank,
        trial_accuracy=trials_correct / trials_run,
        majority_accuracy=majority_correct / majority_total,
        stability_iteration=t_star,
        never_correct_subjects=never_correct,
        records=tuple(all_records),
        wall_time_ms=(time.perf_counter() - start) * 1000.0,
        warnings=tuple(warnings_),
    )
