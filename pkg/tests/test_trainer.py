"""Gradient correctness, optimizer behavior, and model persistence."""

from __future__ import annotations

import numpy as np
import pytest

from flightsense.evaluation import roc_auc, threshold_metrics
from flightsense.scoring import ShapeError
from flightsense.trainer import (
    LinearModel,
    TrainConfig,
    fit,
    loss_and_gradient,
    predict_matrix,
    predict_proba,
    vector_from_mapping,
)


def fd_gradient(weights, bias, X, y, sample_weights, l2, step=1e-5):
    """Central finite differences of the loss; forward evaluations only."""

    def loss_at(w, b):
        return loss_and_gradient(w, b, X, y, sample_weights, l2)[0]

    grad_w = np.zeros_like(weights)
    for k in range(len(weights)):
        bump = np.zeros_like(weights)
        bump[k] = step
        grad_w[k] = (loss_at(weights + bump, bias) - loss_at(weights - bump, bias)) / (2 * step)
    grad_b = (loss_at(weights, bias + step) - loss_at(weights, bias - step)) / (2 * step)
    return grad_w, grad_b


def relative_error(a, b):
    return np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b), np.full_like(a, 1e-8)])


def _random_batch(seed, n=40, k=5, pos_weight=2.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k))
    y = (rng.random(n) < 0.4).astype(np.float64)
    weights = rng.normal(scale=0.5, size=k)
    bias = float(rng.normal())
    sample_weights = np.where(y == 1.0, pos_weight, 1.0)
    return X, y, weights, bias, sample_weights


class TestGradient:
    def test_matches_finite_differences_many_seeds(self):
        worst = 0.0
        for seed in range(100):
            X, y, weights, bias, sw = _random_batch(seed)
            _, gw, gb = loss_and_gradient(weights, bias, X, y, sw, l2=1e-3)
            fw, fb = fd_gradient(weights, bias, X, y, sw, l2=1e-3)
            worst = max(
                worst,
                float(relative_error(gw, fw).max()),
                float(relative_error(np.array([gb]), np.array([fb])).max()),
            )
        assert worst < 1e-5

    def test_zero_model_balanced_batch_has_zero_bias_gradient(self):
        X = np.array([[1.0], [-1.0], [2.0], [-2.0]])
        y = np.array([1.0, 0.0, 1.0, 0.0])
        sw = np.ones(4)
        _, _, gb = loss_and_gradient(np.zeros(1), 0.0, X, y, sw, l2=0.0)
        assert gb == pytest.approx(0.0, abs=1e-15)

    def test_l2_shifts_weight_gradient_exactly(self):
        X, y, weights, bias, sw = _random_batch(7)
        _, g0, b0 = loss_and_gradient(weights, bias, X, y, sw, l2=0.0)
        _, g1, b1 = loss_and_gradient(weights, bias, X, y, sw, l2=0.25)
        np.testing.assert_allclose(g1 - g0, 2 * 0.25 * weights, rtol=0, atol=1e-12)
        assert b1 == b0  # bias is not penalized


class TestFit:
    def test_separable_toy_set_reaches_auc_one(self):
        rng = np.random.default_rng(0)
        n = 60
        X = np.vstack([
            rng.normal(loc=(-3, -3), scale=0.3, size=(n, 2)),
            rng.normal(loc=(3, 3), scale=0.3, size=(n, 2)),
        ])
        y = np.concatenate([np.zeros(n), np.ones(n)])
        model = fit(X, y, ["a", "b"], TrainConfig(epochs=200))
        assert roc_auc(predict_matrix(model, X), y) == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="single class"):
            fit(np.zeros((5, 2)), np.ones(5), ["a", "b"])

    def test_non_finite_matrix_rejected(self):
        X = np.zeros((4, 1))
        X[0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            fit(X, np.array([0, 1, 0, 1]), ["a"])

    def test_loss_history_non_increasing(self):
        X, y, *_ = _random_batch(3, n=200, k=4)
        model = fit(X, y, list("abcd"), TrainConfig(learning_rate=4.0, epochs=150))
        history = np.asarray(model.history)
        assert (np.diff(history) <= 0).all()

    def test_pos_weight_raises_recall(self):
        # Overlapping classes, 20% positive: upweighting positives must
        # move the 0.5-threshold boundary toward them.
        rng = np.random.default_rng(5)
        n = 4000
        y = (rng.random(n) < 0.2).astype(np.float64)
        X = rng.normal(size=(n, 2)) + 1.1 * y[:, None]
        plain = fit(X, y, ["a", "b"], TrainConfig(pos_weight=1.0, epochs=150))
        weighted = fit(X, y, ["a", "b"], TrainConfig(pos_weight=4.23, epochs=150))
        recall_plain = threshold_metrics(predict_matrix(plain, X), y).recall
        recall_weighted = threshold_metrics(predict_matrix(weighted, X), y).recall
        assert recall_weighted > recall_plain

    def test_deterministic_fit(self):
        X, y, *_ = _random_batch(11, n=300, k=6)
        a = fit(X, y, list("abcdef"), TrainConfig())
        b = fit(X, y, list("abcdef"), TrainConfig())
        np.testing.assert_array_equal(a.weights, b.weights)
        assert a.bias == b.bias

    def test_rescaling_a_column_leaves_predictions_unchanged(self):
        X, y, *_ = _random_batch(13, n=300, k=3)
        base = fit(X, y, list("abc"), TrainConfig(epochs=120))
        scaled_X = X.copy()
        scaled_X[:, 1] *= 10.0
        scaled = fit(scaled_X, y, list("abc"), TrainConfig(epochs=120))
        np.testing.assert_allclose(
            predict_matrix(base, X), predict_matrix(scaled, scaled_X), atol=1e-9, rtol=0
        )

    def test_constant_column_keeps_unit_scale(self):
        X = np.column_stack([np.ones(20), np.linspace(-1, 1, 20)])
        y = (np.linspace(-1, 1, 20) > 0).astype(np.float64)
        model = fit(X, y, ["const", "x"])
        assert model.std[0] == 1.0


class TestPredict:
    def _model(self, weights, bias=0.0, k=None):
        k = k or len(weights)
        return LinearModel(
            columns=[f"f{i}" for i in range(k)],
            weights=np.asarray(weights, dtype=np.float64),
            bias=bias,
            mean=np.zeros(k),
            std=np.ones(k),
        )

    def test_zero_model_gives_half(self):
        assert predict_proba(self._model([0.0, 0.0], 0.0), [5.0, -3.0]) == 0.5

    def test_large_bias_saturates_monotonically(self):
        previous = 0.5
        for bias in (1.0, 5.0, 20.0, 200.0):
            p = predict_proba(self._model([0.0], bias), [0.0])
            assert p > previous
            previous = p
        assert previous < 1.0  # clipped inside the open interval

    def test_sign_flip_symmetry(self):
        row = [0.7, -1.2]
        p = predict_proba(self._model([0.4, -0.3], 0.2), row)
        q = predict_proba(self._model([-0.4, 0.3], -0.2), row)
        assert p == pytest.approx(1.0 - q, abs=1e-12)

    def test_manifest_mismatch_lists_columns(self):
        model = self._model([0.1, 0.2])
        with pytest.raises(ShapeError, match="missing=\\['f1'\\]"):
            vector_from_mapping(model, {"f0": 1.0, "extra": 2.0})

    def test_row_width_checked(self):
        with pytest.raises(ShapeError):
            predict_proba(self._model([0.1, 0.2]), [1.0])


class TestPersistence:
    def test_json_round_trip(self, tmp_path):
        X, y, *_ = _random_batch(2, n=120, k=4)
        model = fit(X, y, list("abcd"), TrainConfig(epochs=50, pos_weight=2.5))
        path = tmp_path / "model.json"
        model.save(path)
        loaded = LinearModel.load(path)
        np.testing.assert_array_equal(loaded.weights, model.weights)
        np.testing.assert_array_equal(loaded.mean, model.mean)
        assert loaded.bias == model.bias
        assert loaded.columns == model.columns
        np.testing.assert_array_equal(predict_matrix(loaded, X), predict_matrix(model, X))

    def test_foreign_document_rejected(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text("{}")
        with pytest.raises(ValueError):
            LinearModel.load(path)
