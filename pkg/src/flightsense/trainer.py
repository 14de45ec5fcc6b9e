"""Weighted logistic-regression classifier trained by gradient descent.

The classifier standardizes features (constant columns keep scale 1),
minimizes class-weighted cross-entropy with an L2 penalty on the weights,
and steps with full-batch gradient descent under a halve-on-increase
learning-rate schedule: a step that would raise the loss is retried at
half the rate, so the recorded loss sequence never increases and the fit
is deterministic for fixed data and config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .scoring import ShapeError

_PROB_EPS = 1e-12
_MAX_HALVINGS = 60


class TrainingDivergenceError(RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(slots=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 300
    l2: float = 1e-4
    pos_weight: float = 1.0


@dataclass(slots=True)
class LinearModel:
    """Logistic model with its manifest and standardization constants."""

    columns: list[str]
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    train_meta: dict = field(default_factory=dict)
    history: list[float] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "format": "flightsense-linear-model",
            "version": 1,
            "columns": self.columns,
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "train_meta": self.train_meta,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "LinearModel":
        if doc.get("format") != "flightsense-linear-model":
            raise ValueError("not a model document")
        return cls(
            columns=list(doc["columns"]),
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=float(doc["bias"]),
            mean=np.asarray(doc["standardization"]["mean"], dtype=np.float64),
            std=np.asarray(doc["standardization"]["std"], dtype=np.float64),
            train_meta=dict(doc.get("train_meta", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    z = np.clip(z, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(-z))


def loss_and_gradient(
    weights: np.ndarray,
    bias: float,
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, float]:
    """Weighted cross-entropy with L2 penalty, and its analytic gradient.

    loss = sum_i s_i * ce_i / sum_i s_i + l2 * ||w||^2; the bias is not
    penalized, so an l2 change shifts the weight gradient by exactly
    2 * l2 * w.
    """
    z = X @ weights + bias
    p = np.clip(sigmoid(z), _PROB_EPS, 1.0 - _PROB_EPS)
    total = sample_weights.sum()
    ce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    loss = float((sample_weights * ce).sum() / total + l2 * (weights @ weights))
    residual = sample_weights * (p - y) / total
    grad_w = X.T @ residual + 2.0 * l2 * weights
    grad_b = float(residual.sum())
    return loss, grad_w, grad_b


def standardize_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


def fit(
    X: np.ndarray,
    y: np.ndarray | Sequence[int],
    columns: Sequence[str],
    config: TrainConfig | None = None,
) -> LinearModel:
    """Train on a finite matrix with both classes present.

    Weights start at zero, so the fit is fully deterministic; no RNG is
    involved anywhere in the optimizer.
    """
    config = config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"matrix/target shapes disagree: {X.shape} vs {y.shape}")
    if X.shape[1] != len(columns):
        raise ShapeError(f"{X.shape[1]} matrix columns vs {len(columns)} manifest names")
    if not np.isfinite(X).all():
        raise ValueError("training matrix contains non-finite values")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("training targets contain a single class")

    mean, std = standardize_fit(X)
    Xs = (X - mean) / std
    sample_weights = np.where(y == 1.0, config.pos_weight, 1.0)

    weights = np.zeros(X.shape[1], dtype=np.float64)
    bias = 0.0
    lr = config.learning_rate
    loss, grad_w, grad_b = loss_and_gradient(weights, bias, Xs, y, sample_weights, config.l2)
    if not np.isfinite(loss):
        raise TrainingDivergenceError(0)
    history = [loss]

    for epoch in range(1, config.epochs + 1):
        accepted = False
        for _ in range(_MAX_HALVINGS):
            cand_w = weights - lr * grad_w
            cand_b = bias - lr * grad_b
            cand_loss, cand_gw, cand_gb = loss_and_gradient(
                cand_w, cand_b, Xs, y, sample_weights, config.l2
            )
            if not np.isfinite(cand_loss):
                raise TrainingDivergenceError(epoch)
            if cand_loss <= loss:
                weights, bias = cand_w, cand_b
                loss, grad_w, grad_b = cand_loss, cand_gw, cand_gb
                accepted = True
                break
            lr *= 0.5
        if not accepted:
            break  # step size exhausted; already at numerical convergence
        history.append(loss)

    return LinearModel(
        columns=list(columns),
        weights=weights,
        bias=bias,
        mean=mean,
        std=std,
        train_meta={
            "epochs_run": len(history) - 1,
            "final_loss": loss,
            "final_learning_rate": lr,
            "l2": config.l2,
            "pos_weight": config.pos_weight,
        },
        history=history,
    )


def predict_matrix(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """Probabilities for manifest-ordered rows; output stays inside (0, 1).

    The dot product accumulates column by column so a row scores to the
    same bits whether it arrives alone or inside a batch (BLAS kernels
    vary their summation order with shape).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.columns):
        raise ShapeError(
            f"expected shape (n, {len(model.columns)}), got {X.shape}"
        )
    standardized = (X - model.mean) / model.std
    z = np.full(X.shape[0], model.bias, dtype=np.float64)
    for j in range(X.shape[1]):
        z += standardized[:, j] * model.weights[j]
    return np.clip(sigmoid(z), _PROB_EPS, 1.0 - _PROB_EPS)


def predict_proba(model: LinearModel, row: Sequence[float] | np.ndarray) -> float:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != len(model.columns):
        raise ShapeError(f"expected {len(model.columns)} features, got shape {row.shape}")
    return float(predict_matrix(model, row.reshape(1, -1))[0])


def vector_from_mapping(model: LinearModel, values: Mapping[str, float]) -> np.ndarray:
    """Order a name->value mapping by the model manifest, strictly."""
    missing = [c for c in model.columns if c not in values]
    extra = [c for c in values if c not in model.columns]
    if missing or extra:
        raise ShapeError(f"manifest mismatch: missing={missing} extra={extra}")
    return np.asarray([values[name] for name in model.columns], dtype=np.float64)


class ModelScorer:
    """Scorer facade over a trained linear model."""

    def __init__(self, model: LinearModel):
        self.model = model
        self.columns = list(model.columns)

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        return predict_matrix(self.model, X)
