"""Ranking and threshold metrics, plus the three-version ablation harness.

ROC AUC is computed as a rank statistic: sort once, assign midranks to
tied scores, and normalize the positive rank sum. That equals the
probability that a random positive outranks a random negative (ties count
half) and is invariant under any strictly increasing score transform.
Threshold metrics treat a score equal to the threshold as positive.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import dataset, features, trainer, weather
from .ingest import FlightRecord, clean
from .weather import WeatherObservation

log = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 1000
DEFAULT_THRESHOLD = 0.5

VERSION_LABELS = {1: "schedule", 2: "schedule+propagation", 3: "schedule+propagation+weather"}


class MetricUndefinedError(ValueError):
    """Metric needs both classes present."""


def roc_auc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Midrank AUC in O(n log n)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores/labels shapes disagree: {s.shape} vs {y.shape}")
    positives = int((y == 1).sum())
    negatives = int((y == 0).sum())
    if positives == 0 or negatives == 0:
        raise MetricUndefinedError("AUC undefined: labels contain a single class")

    order = np.argsort(s, kind="mergesort")
    sorted_scores = s[order]
    n = len(s)
    boundaries = np.nonzero(np.diff(sorted_scores))[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    # midrank of a tie group spanning sorted slots [start, end) is the
    # average of 1-based ranks start+1 .. end
    group_ranks = (starts + ends + 1) / 2.0
    ranks = np.repeat(group_ranks, ends - starts)

    rank_sum_pos = float(ranks[y[order] == 1].sum())
    return (rank_sum_pos - positives * (positives + 1) / 2.0) / (positives * negatives)


@dataclass(slots=True)
class ThresholdMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


def threshold_metrics(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
) -> ThresholdMetrics:
    """Confusion-matrix metrics at a fixed threshold (score >= threshold is positive).

    Precision and recall are defined as 0 when their denominators vanish.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    predictions = s >= threshold
    actual = y == 1
    tp = int((predictions & actual).sum())
    fp = int((predictions & ~actual).sum())
    fn = int((~predictions & actual).sum())
    tn = int((~predictions & ~actual).sum())
    n = len(y)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ThresholdMetrics(
        accuracy=(tp + tn) / n if n else 0.0,
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp, fp=fp, fn=fn, tn=tn,
    )


def batch_score(scorer, X: np.ndarray, batch_size: int = DEFAULT_BATCH_SIZE) -> np.ndarray:
    """Score rows in fixed-size batches; identical to row-at-a-time scoring."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    if isinstance(scorer, trainer.LinearModel):
        scorer = trainer.ModelScorer(scorer)
    chunks = [
        scorer.score_batch(X[start : start + batch_size])
        for start in range(0, len(X), batch_size)
    ]
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float64)


@dataclass(slots=True)
class EvalReport:
    """Metrics for one feature version on the shared test partition."""

    version: int
    feature_count: int
    auc: float
    accuracy: float
    recall: float
    precision: float
    f1: float
    delta_auc_vs_prev: float | None = None

    def to_json(self) -> dict:
        doc = {
            "version": self.version,
            "label": VERSION_LABELS.get(self.version, str(self.version)),
            "feature_count": self.feature_count,
            "auc": self.auc,
            "accuracy": self.accuracy,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
        }
        if self.delta_auc_vs_prev is not None:
            doc["delta_auc_vs_prev"] = self.delta_auc_vs_prev
        return doc


def evaluate_model(model: trainer.LinearModel, matrix: dataset.FeatureMatrix) -> EvalReport:
    scores = batch_score(model, matrix.X)
    tm = threshold_metrics(scores, matrix.y)
    return EvalReport(
        version=matrix.version,
        feature_count=len(matrix.columns),
        auc=roc_auc(scores, matrix.y),
        accuracy=tm.accuracy,
        recall=tm.recall,
        precision=tm.precision,
        f1=tm.f1,
    )


@dataclass(slots=True)
class AblationArtifacts:
    """Everything the serving layer needs from one ablation run."""

    encoding: dataset.EncodingMap
    rate_table: features.RateTable
    medians: weather.ImputationMedians
    models: dict[int, trainer.LinearModel]


def ablate(
    records: Sequence[FlightRecord],
    observations: Sequence[WeatherObservation],
    seed: int,
    station_map: Mapping[str, str] | None = None,
    train_config: trainer.TrainConfig | None = None,
    versions: Sequence[int] = (1, 2, 3),
) -> tuple[list[EvalReport], AblationArtifacts]:
    """Train/evaluate each feature version on one corpus and shared split.

    Pipeline per run: weather join (misses left open), cleaning, chain
    sort, rate table over the full corpus, per-version assembly and
    encoding, one seed-shared split, train-median weather fill, training,
    and batch evaluation on the common test partition.
    """
    cleaned = clean(records)
    if not cleaned:
        raise ValueError("no records survive cleaning")
    ordered = features.sort_chains(cleaned)
    weather_open = weather.join_weather(ordered, observations, station_map, medians=None)
    rate_table = features.build_rate_table(ordered)
    encoding = dataset.fit_encoding(ordered)

    n = len(ordered)
    train_idx, _val_idx, test_idx = dataset.split_indices(n, seed)
    medians = weather.compute_medians(
        {name: np.asarray(col)[train_idx] for name, col in weather_open.items()}
    )
    weather_filled = weather.fill_missing(weather_open, medians)

    reports: list[EvalReport] = []
    models: dict[int, trainer.LinearModel] = {}
    previous_auc: float | None = None
    for version in versions:
        table = features.assemble_features(
            version,
            ordered,
            rate_table=rate_table if version >= 2 else None,
            weather=weather_filled if version == 3 else None,
        )
        matrix = dataset.encode_table(table, encoding)
        config = train_config or trainer.TrainConfig()
        config = trainer.TrainConfig(
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            l2=config.l2,
            pos_weight=dataset.scale_pos_weight(matrix.y[train_idx]),
        )
        model = trainer.fit(matrix.X[train_idx], matrix.y[train_idx], matrix.columns, config)
        models[version] = model

        test_matrix = dataset.FeatureMatrix(
            version=version, columns=matrix.columns, X=matrix.X[test_idx], y=matrix.y[test_idx]
        )
        report = evaluate_model(model, test_matrix)
        if previous_auc is not None:
            report.delta_auc_vs_prev = report.auc - previous_auc
        previous_auc = report.auc
        reports.append(report)
        log.info(
            "version %d: %d features, test AUC %.4f", version, report.feature_count, report.auc
        )

    return reports, AblationArtifacts(
        encoding=encoding, rate_table=rate_table, medians=medians, models=models
    )


def save_reports(reports: Sequence[EvalReport], path: str | Path) -> None:
    Path(path).write_text(json.dumps([r.to_json() for r in reports], indent=2))


def load_reports(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text())
