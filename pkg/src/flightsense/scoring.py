"""Rule-based delay risk: condition flags, multiplicative compounding, tiers.

The rule engine starts from an empirical base delay rate and multiplies in
one configurable factor per active condition (busy origin airport, strong
wind, heavy precipitation, any snow, peak departure window, Friday/Sunday,
delayed inbound aircraft), capping the result so compounding can never
produce an overconfident estimate. Everything here is a pure function of
its inputs, so concurrent use needs no coordination.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .features import PREV_DELAY_THRESHOLD_MINUTES, compute_time_features

HIGH_DELAY_AIRPORTS = frozenset({"JFK", "ORD", "EWR"})
HIGH_WIND_MPH = 25.0
HEAVY_PRECIP_INCHES = 0.3
# Day-of-week codes with 1 = Monday .. 7 = Sunday.
WEEKEND_TRAVEL_DAYS = frozenset({5, 7})

# Fixed report order for applied multipliers.
CONDITION_ORDER: tuple[str, ...] = (
    "high_delay_airport",
    "high_wind",
    "heavy_precip",
    "any_snow",
    "peak_hours",
    "friday_or_sunday",
    "prev_aircraft_delayed",
)

DEFAULT_MULTIPLIERS: dict[str, float] = {
    "high_delay_airport": 1.25,
    "high_wind": 1.20,
    "heavy_precip": 1.35,
    "any_snow": 2.10,
    "peak_hours": 1.15,
    "friday_or_sunday": 1.10,
    "prev_aircraft_delayed": 1.30,
}
DEFAULT_BASE_RATE = 0.19
DEFAULT_CAP = 0.85
DEFAULT_TIER_THRESHOLDS = {"high": 0.70, "moderate": 0.50, "low": 0.30}

TIERS = ("high", "moderate", "low", "on-time")


class RiskConfigError(ValueError):
    """Invalid rule-engine configuration."""


@dataclass(frozen=True, slots=True)
class RiskConditions:
    """Binary condition flags derived from one flight/weather context."""

    high_delay_airport: int
    high_wind: int
    heavy_precip: int
    any_snow: int
    peak_hours: int
    friday_or_sunday: int
    prev_aircraft_delayed: int

    def active(self) -> list[str]:
        return [name for name in CONDITION_ORDER if getattr(self, name)]


@dataclass(frozen=True, slots=True)
class RiskConfig:
    base_rate: float = DEFAULT_BASE_RATE
    cap: float = DEFAULT_CAP
    multipliers: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_MULTIPLIERS))
    tier_thresholds: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_TIER_THRESHOLDS)
    )

    def __post_init__(self) -> None:
        for name in CONDITION_ORDER:
            value = self.multipliers.get(name)
            if value is None:
                raise RiskConfigError(f"missing multiplier for condition {name}")
            if value <= 0:
                raise RiskConfigError(f"multiplier for {name} must be positive, got {value}")
        if not 0 < self.base_rate <= 1:
            raise RiskConfigError(f"base rate must be in (0, 1], got {self.base_rate}")
        if not 0 < self.cap <= 1:
            raise RiskConfigError(f"cap must be in (0, 1], got {self.cap}")

    @classmethod
    def from_json(cls, doc: Mapping) -> "RiskConfig":
        return cls(
            base_rate=float(doc.get("base", DEFAULT_BASE_RATE)),
            cap=float(doc.get("cap", DEFAULT_CAP)),
            multipliers={
                **DEFAULT_MULTIPLIERS,
                **{k: float(v) for k, v in doc.get("multipliers", {}).items()},
            },
            tier_thresholds={
                **DEFAULT_TIER_THRESHOLDS,
                **{k: float(v) for k, v in doc.get("tiers", {}).items()},
            },
        )

    def to_json(self) -> dict:
        return {
            "base": self.base_rate,
            "cap": self.cap,
            "multipliers": dict(self.multipliers),
            "tiers": dict(self.tier_thresholds),
        }

    @classmethod
    def load(cls, path: str | Path) -> "RiskConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


@dataclass(frozen=True, slots=True)
class FlightContext:
    """The flight-side inputs the condition flags are derived from."""

    origin: str
    crs_dep_time: int
    day_of_week: int
    prev_arr_delay: float = 0.0


@dataclass(frozen=True, slots=True)
class WeatherContext:
    """Origin weather at departure; values must already be imputed/known."""

    wind: float
    precip: float
    snow: float
    tmax: float = 0.0
    tmin: float = 0.0


@dataclass(frozen=True, slots=True)
class RiskEstimate:
    probability: float
    base_rate: float
    applied: tuple[tuple[str, float], ...]
    capped: bool
    tier: str

    def to_json(self) -> dict:
        return {
            "probability": self.probability,
            "base_rate": self.base_rate,
            "applied_multipliers": [
                {"condition": name, "multiplier": value} for name, value in self.applied
            ],
            "capped": self.capped,
            "tier": self.tier,
        }


def detect_conditions(flight: FlightContext, weather: WeatherContext) -> RiskConditions:
    """Evaluate all seven condition flags; all threshold comparisons are strict."""
    _, is_peak, _ = compute_time_features(flight.crs_dep_time)
    return RiskConditions(
        high_delay_airport=1 if flight.origin in HIGH_DELAY_AIRPORTS else 0,
        high_wind=1 if weather.wind > HIGH_WIND_MPH else 0,
        heavy_precip=1 if weather.precip > HEAVY_PRECIP_INCHES else 0,
        any_snow=1 if weather.snow > 0 else 0,
        peak_hours=is_peak,
        friday_or_sunday=1 if flight.day_of_week in WEEKEND_TRAVEL_DAYS else 0,
        prev_aircraft_delayed=1 if flight.prev_arr_delay > PREV_DELAY_THRESHOLD_MINUTES else 0,
    )


def tier(probability: float, thresholds: Mapping[str, float] | None = None) -> str:
    """Four-level classification with strict lower bounds per tier."""
    t = thresholds or DEFAULT_TIER_THRESHOLDS
    if probability > t["high"]:
        return "high"
    if probability > t["moderate"]:
        return "moderate"
    if probability > t["low"]:
        return "low"
    return "on-time"


def compound_risk(conditions: RiskConditions, config: RiskConfig | None = None) -> RiskEstimate:
    """Multiply the base rate by every active condition's factor, then cap.

    The applied list reports active multipliers in canonical condition
    order; the product itself is order-free.
    """
    config = config or RiskConfig()
    applied = tuple((name, float(config.multipliers[name])) for name in conditions.active())
    probability = config.base_rate
    for _, multiplier in applied:
        probability *= multiplier
    capped = probability > config.cap
    if capped:
        probability = config.cap
    return RiskEstimate(
        probability=probability,
        base_rate=config.base_rate,
        applied=applied,
        capped=capped,
        tier=tier(probability, config.tier_thresholds),
    )


# -- pluggable probability scorers ------------------------------------------


class ShapeError(ValueError):
    """Input vector does not match the scorer's column manifest."""


class Scorer(Protocol):
    """Anything that can turn manifest-ordered feature rows into probabilities."""

    columns: list[str]

    def score_batch(self, X: np.ndarray) -> np.ndarray: ...


def check_manifest(expected: Sequence[str], provided: Sequence[str]) -> None:
    if list(expected) == list(provided):
        return
    missing = [c for c in expected if c not in provided]
    extra = [c for c in provided if c not in expected]
    if missing or extra:
        raise ShapeError(f"manifest mismatch: missing={missing} extra={extra}")
    raise ShapeError("manifest mismatch: column order differs")


def score(vector: Sequence[float] | np.ndarray, scorer: Scorer) -> float:
    """Score one manifest-ordered row with any scorer implementation."""
    row = np.asarray(vector, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != len(scorer.columns):
        raise ShapeError(
            f"expected a vector of {len(scorer.columns)} features, got shape {row.shape}"
        )
    result = scorer.score_batch(row.reshape(1, -1))
    return float(result[0])


class FileScorer:
    """Precomputed predictions addressed by row position.

    Stands in for an external model endpoint when a prediction file is
    all that is available.
    """

    def __init__(self, path: str | Path, columns: Sequence[str] | None = None):
        doc = json.loads(Path(path).read_text())
        self.predictions = np.asarray(doc["predictions"], dtype=np.float64)
        self.columns = list(doc.get("columns", columns or []))

    def score_row(self, row_id: int) -> float:
        return float(self.predictions[row_id])

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        if len(X) > len(self.predictions):
            raise ShapeError(
                f"{len(X)} rows requested but only {len(self.predictions)} stored predictions"
            )
        return self.predictions[: len(X)].copy()


class RemoteScorer:
    """HTTP scorer POSTing manifest-ordered rows to a JSON endpoint."""

    def __init__(self, url: str, columns: Sequence[str]):
        self.url = url
        self.columns = list(columns)

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        import urllib.request

        payload = json.dumps({"columns": self.columns, "rows": X.tolist()}).encode("utf-8")
        request = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"}
        )
        with urllib.request.urlopen(request) as response:
            doc = json.loads(response.read().decode("utf-8"))
        return np.asarray(doc["scores"], dtype=np.float64)
