import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabforest.forest import ForestConfig
from stabforest.stats import spearman_rho
from stabforest.synthetic import planted_dataset
from stabforest.trials import (
    TrialRecord,
    TrialsConfig,
    TrialsError,
    VoteTally,
    group_ranking,
    run_randomized_trials,
    run_subject_trials,
    stability_iteration,
    subject_ranking,
    tally_votes,
    top_k_features,
)

from conftest import make_dataset

CHEAP_TRIALS = TrialsConfig(
    max_trials_per_subject=12,
    top_k=3,
    master_seed=42,
    early_stop_window=4,
    forest=ForestConfig(n_trees=15),
)


class TestTopK:
    def test_simple_sort(self):
        assert top_k_features(np.array([0.1, 0.9, 0.5]), 2) == (1, 2)

    def test_all_equal_ties_by_index(self):
        assert top_k_features(np.array([0.3, 0.3, 0.3]), 2) == (0, 1)

    def test_full_k_is_permutation(self):
        scores = np.array([0.2, 0.8, 0.2, 0.5])
        assert sorted(top_k_features(scores, 4)) == [0, 1, 2, 3]

    def test_k_too_large(self):
        with pytest.raises(TrialsError):
            top_k_features(np.array([1.0, 2.0]), 3)


def brute_force_tally(ballots, k, p):
    """Independent dict-based recount of the Borda rule."""
    borda = {f: 0.0 for f in range(p)}
    membership = {f: 0 for f in range(p)}
    for ballot in ballots:
        for position, feature in enumerate(ballot):
            borda[feature] += k - (position + 1) + 1
            membership[feature] += 1
    return borda, membership, len(ballots)


class TestTallyVotes:
    def test_hand_tally_two_ballots(self):
        # weights (3,2,1): A=3+3, B=2+1, C=1+2; B precedes C by index
        tally = tally_votes([(0, 1, 2), (0, 2, 1)], k=3, n_features=3)
        assert tally.borda.tolist() == [6.0, 3.0, 3.0]
        assert tally.membership.tolist() == [2, 2, 2]
        assert subject_ranking(tally, 3) == (0, 1, 2)

    def test_empty_ballot_list(self):
        tally = tally_votes([], k=3, n_features=4)
        assert tally.n_ballots == 0
        assert tally.borda.tolist() == [0.0] * 4

    def test_single_ballot_identity(self):
        tally = tally_votes([(2, 0)], k=2, n_features=3)
        assert subject_ranking(tally, 2) == (2, 0)

    def test_short_ballots_allowed(self):
        tally = tally_votes([(1,)], k=3, n_features=2)
        assert tally.borda.tolist() == [0.0, 3.0]

    def test_duplicate_features_rejected(self):
        with pytest.raises(TrialsError):
            tally_votes([(1, 1)], k=2, n_features=3)

    @given(
        st.lists(
            st.permutations(range(5)).map(lambda perm: tuple(perm[:3])),
            max_size=40,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_brute_force_recount(self, ballots):
        tally = tally_votes(ballots, k=3, n_features=5)
        borda, membership, n = brute_force_tally(ballots, 3, 5)
        assert tally.n_ballots == n
        for f in range(5):
            assert tally.borda[f] == borda[f]
            assert tally.membership[f] == membership[f]

    def test_membership_monotone_as_ballots_append(self):
        ballots = [(0, 1), (1, 2), (2, 0), (0, 2)]
        previous = np.zeros(3)
        for i in range(len(ballots) + 1):
            tally = tally_votes(ballots[:i], k=2, n_features=3)
            assert (tally.membership >= previous).all()
            previous = tally.membership


class TestSubjectRanking:
    def test_borda_tie_broken_by_membership(self):
        tally = VoteTally(
            borda=np.array([4.0, 4.0, 1.0]),
            membership=np.array([1, 2, 1]),
            n_ballots=2,
        )
        assert subject_ranking(tally, 2) == (1, 0)

    def test_full_tie_broken_by_index(self):
        tally = VoteTally(
            borda=np.array([2.0, 2.0]), membership=np.array([1, 1]), n_ballots=1
        )
        assert subject_ranking(tally, 2) == (0, 1)

    def test_no_ballots_is_error(self):
        tally = VoteTally(borda=np.zeros(2), membership=np.zeros(2, int), n_ballots=0)
        with pytest.raises(TrialsError, match="no correct trials"):
            subject_ranking(tally, 1)


class TestGroupRanking:
    def test_unanimous(self):
        tally, ranking = group_ranking([(3, 1), (3, 1), (3, 1)], k=2, n_features=4)
        assert ranking == (3, 1)

    def test_two_subject_tie_resolves_by_index(self):
        # borda A=3, B=3; membership tie; index order wins
        _, ranking = group_ranking([(0, 1), (1, 0)], k=2, n_features=2)
        assert ranking == (0, 1)

    def test_single_subject(self):
        _, ranking = group_ranking([(2, 0, 1)], k=3, n_features=3)
        assert ranking == (2, 0, 1)

    def test_empty_is_error(self):
        with pytest.raises(TrialsError):
            group_ranking([], 2, 3)


class TestRunSubjectTrials:
    def test_separable_data_all_correct(self, planted_small):
        records = run_subject_trials(planted_small, 0, CHEAP_TRIALS)
        assert all(r.correct for r in records)
        assert all(r.top_features is not None for r in records)
        assert all(len(set(r.top_features)) == len(r.top_features) for r in records)

    def test_early_stop_disabled_runs_all_trials(self, planted_small):
        cfg = TrialsConfig(
            max_trials_per_subject=6,
            top_k=2,
            master_seed=1,
            early_stop_window=0,
            forest=ForestConfig(n_trees=10),
        )
        records = run_subject_trials(planted_small, 1, cfg)
        assert len(records) == 6

    def test_early_stop_minimum_count(self, planted_small):
        # a stable subject stops after window + 1 correct trials
        cfg = TrialsConfig(
            max_trials_per_subject=50,
            top_k=2,
            master_seed=5,
            early_stop_window=3,
            forest=ForestConfig(n_trees=25),
        )
        records = run_subject_trials(planted_small, 2, cfg)
        assert len(records) >= 4
        assert len(records) < 50

    def test_seeds_follow_derivation(self, planted_small):
        records = run_subject_trials(planted_small, 3, CHEAP_TRIALS)
        from stabforest.rng import derive_trial_seed

        for r in records:
            assert r.seed == derive_trial_seed(CHEAP_TRIALS.master_seed, 3, r.trial)


class TestMultiRowSubjects:
    def test_correct_requires_every_holdout_row(self):
        base = planted_dataset(30, 2, 2, seed=71, margin=4.0)
        # pair rows into 15 subjects; flip one row of subject 0 so that
        # subject can never have all rows right
        labels = base.labels.copy()
        labels[0] = 1 - labels[0]
        d = make_dataset(
            base.features, labels, subjects=np.repeat(np.arange(15), 2)
        )
        cfg = TrialsConfig(
            max_trials_per_subject=4,
            top_k=2,
            master_seed=3,
            early_stop_window=0,
            forest=ForestConfig(n_trees=15),
        )
        bad = run_subject_trials(d, 0, cfg)
        assert not any(r.correct for r in bad)
        good = run_subject_trials(d, 5, cfg)
        assert all(r.correct for r in good)


def _never_correct_dataset():
    """Row 0 carries a label contradicting its own (strong) features."""
    d = planted_dataset(30, 2, 2, seed=55, margin=4.0)
    labels = d.labels.copy()
    labels[0] = 1 - labels[0]
    return make_dataset(d.features, labels)


class TestNeverCorrect:
    def test_flipped_row_never_predicted_correctly(self):
        d = _never_correct_dataset()
        cfg = TrialsConfig(
            max_trials_per_subject=5,
            top_k=2,
            master_seed=9,
            early_stop_window=2,
            forest=ForestConfig(n_trees=15),
        )
        records = run_subject_trials(d, 0, cfg)
        # the empty ballot box is already stable: the window, counted
        # over all trials, cuts the subject off without a ballot
        assert len(records) == 2
        assert not any(r.correct for r in records)
        assert all(r.top_features is None for r in records)

        report = run_randomized_trials(d, cfg)
        assert 0 in report.never_correct_subjects
        assert report.per_subject[0].trials_correct == 0
        assert report.per_subject[0].ranking == ()

    def test_never_correct_runs_to_cap_without_window(self):
        d = _never_correct_dataset()
        cfg = TrialsConfig(
            max_trials_per_subject=5,
            top_k=2,
            master_seed=9,
            early_stop_window=0,
            forest=ForestConfig(n_trees=15),
        )
        records = run_subject_trials(d, 0, cfg)
        assert len(records) == 5
        assert not any(r.correct for r in records)


class TestStabilityIteration:
    def test_identical_records_stabilize_at_zero(self):
        records = [
            TrialRecord(subject=s, trial=t, seed=0, correct=True, top_features=(0, 1))
            for s in range(3)
            for t in range(5)
        ]
        assert stability_iteration(records, k=2, n_features=4) == 0

    def test_not_reached_when_final_set_appears_last(self):
        # single-feature ballots: counts are 0:2 vs 3:3 only after the
        # final trial, so the final set first appears at the last trial
        ballots = [(0,), (0,), (3,), (3,), (3,)]
        records = [
            TrialRecord(0, t, 0, True, ballot) for t, ballot in enumerate(ballots)
        ]
        assert stability_iteration(records, k=1, n_features=4) is None

    def brute_force(self, records, k, p):
        from conftest import prefix_recompute_stability

        return prefix_recompute_stability(records, k, p)

    def test_constructed_overtake_matches_prefix_oracle(self):
        # feature 3 overtakes feature 2 at a known trial: ten (2,) ballots
        # then (3,) ballots; the borda tie at trial 19 still resolves to
        # feature 2 by index, feature 3 leads for good from trial 20
        records = [
            TrialRecord(0, t, 0, True, (2,) if t < 10 else (3,)) for t in range(40)
        ]
        incremental = stability_iteration(records, k=1, n_features=5)
        oracle = self.brute_force(records, 1, 5)
        assert incremental == oracle
        assert incremental == 20

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_random_records_match_prefix_oracle(self, seed):
        rng = np.random.default_rng(seed)
        records = []
        for s in range(3):
            for t in range(int(rng.integers(2, 9))):
                correct = rng.random() < 0.8
                top = tuple(rng.permutation(5)[:2]) if correct else None
                records.append(TrialRecord(s, t, 0, correct, top))
        if not any(r.correct for r in records):
            records.append(TrialRecord(0, 0, 0, True, (0, 1)))
        incremental = stability_iteration(records, k=2, n_features=5)
        assert incremental == self.brute_force(records, 2, 5)


class TestRunRandomizedTrials:
    def test_planted_recovery_and_bookkeeping(self, planted_medium):
        cfg = TrialsConfig(
            max_trials_per_subject=8,
            top_k=5,
            master_seed=42,
            early_stop_window=3,
            forest=ForestConfig(n_trees=40),
        )
        report = run_randomized_trials(planted_medium, cfg)
        assert set(report.group_ranking) == {0, 1, 2, 3, 4}
        run = sum(r.trials_run for r in report.per_subject)
        correct = sum(r.trials_correct for r in report.per_subject)
        assert report.trial_accuracy == pytest.approx(correct / run)
        assert report.majority_accuracy >= 0.9
        assert len(report.records) == run

    def test_deterministic_reports(self, planted_small):
        r1 = run_randomized_trials(planted_small, CHEAP_TRIALS)
        r2 = run_randomized_trials(planted_small, CHEAP_TRIALS)
        d1, d2 = r1.to_dict(), r2.to_dict()
        d1.pop("wall_time_ms")
        d2.pop("wall_time_ms")
        assert d1 == d2

    def test_master_seed_stability_on_planted_data(self, planted_medium):
        cfg_a = TrialsConfig(
            max_trials_per_subject=6,
            top_k=5,
            master_seed=42,
            early_stop_window=0,
            forest=ForestConfig(n_trees=40),
        )
        cfg_b = TrialsConfig(
            max_trials_per_subject=6,
            top_k=5,
            master_seed=43,
            early_stop_window=0,
            forest=ForestConfig(n_trees=40),
        )
        ra = run_randomized_trials(planted_medium, cfg_a)
        rb = run_randomized_trials(planted_medium, cfg_b)
        assert ra.group_ranking[0] == rb.group_ranking[0]
        rho = spearman_rho(ra.group_tally.borda, rb.group_tally.borda)
        assert rho >= 0.9

    def test_trial_accuracy_close_to_loso(self, planted_small):
        from stabforest.validation import loso_validate

        loso = loso_validate(planted_small, CHEAP_TRIALS.forest, 42)
        report = run_randomized_trials(planted_small, CHEAP_TRIALS)
        assert report.trial_accuracy >= loso.accuracy - 0.05

    def test_requires_multiple_subjects(self, planted_small):
        from stabforest.data import Dataset

        d = Dataset(
            features=planted_small.features,
            labels=planted_small.labels,
            feature_names=planted_small.feature_names,
            subject_ids=np.zeros(planted_small.n_rows, dtype=np.int64),
            n_subjects=1,
        )
        with pytest.raises(TrialsError):
            run_randomized_trials(d, CHEAP_TRIALS)
