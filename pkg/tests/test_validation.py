import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabforest.forest import ForestConfig
from stabforest.synthetic import planted_dataset
from stabforest.validation import (
    ConfusionMatrix,
    ValidationError,
    compute_metrics,
    holdout_validate,
    kfold_validate,
    loocv_validate,
    loso_validate,
    _fold_slices,
)

from conftest import make_dataset

CHEAP = ForestConfig(n_trees=15)


class TestMetrics:
    def test_perfect(self):
        acc, bal, partial = compute_metrics(ConfusionMatrix(tp=5, tn=5))
        assert (acc, bal, partial) == (1.0, 1.0, False)

    def test_asymmetric_example(self):
        acc, bal, partial = compute_metrics(ConfusionMatrix(tp=9, fn=1, tn=4, fp=6))
        assert acc == pytest.approx(0.65)
        assert bal == pytest.approx(0.65)
        assert not partial

    def test_always_positive_on_balanced_data(self):
        acc, bal, _ = compute_metrics(ConfusionMatrix(tp=10, fp=10))
        assert bal == pytest.approx(0.5)

    def test_partial_flag_when_class_absent(self):
        acc, bal, partial = compute_metrics(ConfusionMatrix(tp=4, fn=1))
        assert partial
        assert bal == pytest.approx(0.8)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValidationError):
            compute_metrics(ConfusionMatrix())

    def test_negative_counts_rejected(self):
        with pytest.raises(ValidationError):
            ConfusionMatrix(tp=-1)


class TestFoldSlices:
    def test_two_folds_of_three_rows(self):
        assert _fold_slices(3, 2) == [(0, 2), (2, 3)]

    def test_sizes_differ_by_at_most_one(self):
        for n in (5, 10, 13, 100):
            for k in (2, 3, 7):
                if k > n:
                    continue
                sizes = [hi - lo for lo, hi in _fold_slices(n, k)]
                assert sum(sizes) == n
                assert max(sizes) - min(sizes) <= 1


class TestHoldout:
    def test_deterministic_report(self, planted_small):
        r1 = holdout_validate(planted_small, CHEAP, 42)
        r2 = holdout_validate(planted_small, CHEAP, 42)
        d1, d2 = r1.to_dict(), r2.to_dict()
        d1.pop("wall_time_ms")
        d2.pop("wall_time_ms")
        assert json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True)

    def test_strong_margin_accuracy(self, planted_small):
        report = holdout_validate(planted_small, CHEAP, 42)
        assert report.accuracy >= 0.9
        assert len(report.per_fold) == 1
        evaluated = report.predictions >= 0
        assert evaluated.sum() == 8  # round(0.2 * 40)


class TestKfold:
    def test_fold_count_and_pooling(self, planted_small):
        report = kfold_validate(planted_small, CHEAP, 7, k=5)
        assert len(report.per_fold) == 5
        pooled = sum((f.cm for f in report.per_fold), ConfusionMatrix())
        assert pooled.total == planted_small.n_rows
        acc, _, _ = compute_metrics(pooled)
        assert report.accuracy == pytest.approx(acc)

    def test_pooled_accuracy_matches_predictions(self, planted_small):
        report = kfold_validate(planted_small, CHEAP, 7, k=5)
        assert (report.predictions >= 0).all()
        acc = float((report.predictions == planted_small.labels).mean())
        assert report.accuracy == pytest.approx(acc)

    @given(st.integers(2, 8), st.integers(0, 1000))
    @settings(max_examples=10, deadline=None)
    def test_every_row_in_exactly_one_fold(self, k, seed):
        d = planted_dataset(24, 1, 2, seed=3, margin=3.0)
        report = kfold_validate(d, ForestConfig(n_trees=3), seed, k=k)
        assert (report.predictions >= 0).all()

    def test_k_bounds(self, planted_small):
        with pytest.raises(ValidationError):
            kfold_validate(planted_small, CHEAP, 1, k=1)
        with pytest.raises(ValidationError):
            kfold_validate(planted_small, CHEAP, 1, k=planted_small.n_rows + 1)

    def test_single_class_fold_flagged_not_fatal(self):
        # lopsided labels eventually put every minority row outside some
        # test fold; that fold is single-class, flagged, and still scored
        d = make_dataset(
            np.arange(24).reshape(12, 2),
            [0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0],
        )
        for seed in range(60):
            try:
                report = kfold_validate(d, ForestConfig(n_trees=5), seed, k=3)
            except Exception:
                continue  # a train fold lost a whole class; try another shuffle
            if any("single-class fold" in f for fold in report.per_fold for f in fold.flags):
                assert len(report.per_fold) == 3
                assert any("single-class" in w for w in report.warnings)
                return
        pytest.fail("no seed produced a single-class test fold")


class TestLoso:
    def test_alias_and_equivalences(self, planted_small):
        loso = loso_validate(planted_small, CHEAP, 11)
        loocv = loocv_validate(planted_small, CHEAP, 11)
        kn = kfold_validate(planted_small, CHEAP, 11, k=planted_small.n_rows)
        assert np.array_equal(loso.predictions, loocv.predictions)
        assert np.array_equal(loso.predictions, kn.predictions)

    def test_one_fold_per_subject(self, planted_small):
        report = loso_validate(planted_small, CHEAP, 11)
        assert len(report.per_fold) == planted_small.n_subjects

    def test_single_subject_rejected(self):
        d = make_dataset(np.arange(8).reshape(4, 2), [0, 1, 0, 1], subjects=[0, 0, 0, 0])
        with pytest.raises(ValidationError):
            loso_validate(d, CHEAP, 1)

    def test_degenerate_fold_skipped_and_counted(self):
        d = make_dataset(
            np.arange(12).reshape(6, 2),
            [1, 1, 0, 0, 0, 0],
            subjects=[0, 0, 1, 1, 2, 2],
        )
        report = loso_validate(d, ForestConfig(n_trees=5), 1)
        assert report.skipped_folds == 1
        assert len(report.per_fold) == 2
        assert (report.predictions[:2] == -1).all()

    def test_48_subject_panel_reaches_perfect_accuracy(self):
        d = planted_dataset(48, 3, 20, seed=23, margin=4.0)
        report = loso_validate(d, ForestConfig(n_trees=40), 42)
        assert report.accuracy == 1.0
