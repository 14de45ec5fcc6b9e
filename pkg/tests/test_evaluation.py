"""Ranking metric against the exhaustive pairwise oracle."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flightsense.evaluation import (
    MetricUndefinedError,
    batch_score,
    roc_auc,
    threshold_metrics,
)
from flightsense.trainer import LinearModel


def brute_force_auc(scores, labels) -> float:
    """Count every positive-negative pair; ties score half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


class TestRocAuc:
    def test_perfect_ranking(self):
        assert roc_auc([0.7, 0.2], [1, 0]) == 1.0

    def test_all_ties_is_half(self):
        assert roc_auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_hand_enumerated_four_pairs(self):
        # pairs (0.9 vs 0.6, 0.9 vs 0.1, 0.4 vs 0.6, 0.4 vs 0.1): 3 wins of 4
        assert roc_auc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(MetricUndefinedError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(10, 1000))
            # Coarse quantization forces plenty of ties.
            scores = np.round(rng.random(n), 2)
            labels = (rng.random(n) < rng.uniform(0.2, 0.8)).astype(np.int8)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            fast = roc_auc(scores, labels)
            assert fast == pytest.approx(brute_force_auc(scores, labels), abs=1e-9)

    def test_invariant_under_strictly_increasing_transforms(self):
        rng = np.random.default_rng(3)
        scores = rng.random(500)
        labels = (rng.random(500) < 0.3).astype(np.int8)
        base = roc_auc(scores, labels)
        assert roc_auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert roc_auc(3.0 * scores + 2.0, labels) == pytest.approx(base, abs=1e-12)

    def test_ranking_reversal_complements(self):
        rng = np.random.default_rng(4)
        scores = np.round(rng.random(400), 1)
        labels = (rng.random(400) < 0.4).astype(np.int8)
        assert roc_auc(scores, labels) + roc_auc(-scores, labels) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(
        data=st.lists(
            st.tuples(st.integers(0, 20), st.booleans()), min_size=4, max_size=60
        ).filter(lambda d: len({b for _, b in d}) == 2)
    )
    def test_brute_force_property(self, data):
        scores = [s / 20 for s, _ in data]
        labels = [int(b) for _, b in data]
        assert roc_auc(scores, labels) == pytest.approx(
            brute_force_auc(scores, labels), abs=1e-9
        )


class TestThresholdMetrics:
    def test_hand_confusion_matrix(self):
        # preds at 0.5: [1, 1, 0, 0] vs labels [1, 0, 1, 0] -> one of each cell
        tm = threshold_metrics([0.6, 0.6, 0.4, 0.2], [1, 0, 1, 0])
        assert (tm.tp, tm.fp, tm.fn, tm.tn) == (1, 1, 1, 1)
        assert (tm.accuracy, tm.precision, tm.recall, tm.f1) == (0.5, 0.5, 0.5, 0.5)

    def test_perfect_scores(self):
        tm = threshold_metrics([0.9, 0.1, 0.8], [1, 0, 1])
        assert (tm.accuracy, tm.precision, tm.recall, tm.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_no_predicted_positives_degenerate_zero(self):
        tm = threshold_metrics([0.1, 0.2], [1, 0])
        assert (tm.precision, tm.recall, tm.f1) == (0.0, 0.0, 0.0)

    def test_score_equal_to_threshold_is_positive(self):
        tm = threshold_metrics([0.5], [1])
        assert tm.tp == 1

    def test_confusion_counts_sum_to_n(self):
        rng = np.random.default_rng(9)
        scores = rng.random(257)
        labels = (rng.random(257) < 0.3).astype(np.int8)
        tm = threshold_metrics(scores, labels)
        assert tm.tp + tm.fp + tm.fn + tm.tn == 257


class TestBatchScore:
    def _model(self, k=3):
        rng = np.random.default_rng(1)
        return LinearModel(
            columns=[f"f{i}" for i in range(k)],
            weights=rng.normal(size=k),
            bias=0.1,
            mean=np.zeros(k),
            std=np.ones(k),
        )

    def test_batch_count_and_equality(self):
        model = self._model()
        rng = np.random.default_rng(2)
        X = rng.normal(size=(2500, 3))
        batched = batch_score(model, X, batch_size=1000)
        single = np.array([batch_score(model, X[i : i + 1])[0] for i in range(len(X))])
        assert len(batched) == 2500
        np.testing.assert_array_equal(batched, single)

    def test_empty_matrix(self):
        assert batch_score(self._model(), np.empty((0, 3))).tolist() == []

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            batch_score(self._model(), np.empty((0, 3)), batch_size=0)
