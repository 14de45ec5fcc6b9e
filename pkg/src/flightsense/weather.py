"""Daily station weather: loading, airport mapping, and the origin join.

Observations are daily GHCND-style rows (wind, precipitation, snowfall,
max/min temperature) keyed by station and date. Flights pick up the five
values of their origin airport's station for the departure date; airports
outside the monitored set, missing station-days, and missing individual
fields all fall back to per-column training medians so the joined columns
are total.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .ingest import FlightRecord

log = logging.getLogger(__name__)

# Airport -> station for the ten monitored airports.
DEFAULT_STATION_MAP: dict[str, str] = {
    "JFK": "USW00094789",
    "LAX": "USW00023174",
    "ORD": "USW00094846",
    "ATL": "USW00013874",
    "DFW": "USW00003927",
    "DEN": "USW00003017",
    "SFO": "USW00023234",
    "SEA": "USW00024233",
    "MIA": "USW00012839",
    "BOS": "USW00014739",
}

VARIABLE_FIELDS = ("awnd", "prcp", "snow", "tmax", "tmin")
# Joined column name per variable, in output order.
JOINED_COLUMNS = ("origin_wind", "origin_precip", "origin_snow", "origin_tmax", "origin_tmin")


@dataclass(slots=True)
class WeatherObservation:
    """One station-day of the five meteorological variables."""

    station_id: str
    date: date
    awnd: float | None
    prcp: float | None
    snow: float | None
    tmax: float | None
    tmin: float | None


@dataclass(slots=True)
class LoadStats:
    rows: int = 0
    kept: int = 0
    duplicates: int = 0
    bad_dates: int = 0
    negative_amounts: int = 0
    inverted_temps: int = 0


def _parse_float(cell: str) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        return float(cell)
    except ValueError:
        return None


def load_observations_detailed(
    source: IO[str] | str | Path,
) -> tuple[list[WeatherObservation], LoadStats]:
    """Load station-day observations from CSV, deduplicating on (station, date).

    Later rows win on duplicate keys. Rows with unparseable dates are
    skipped; negative precipitation/snow amounts (missing-data sentinels)
    and inverted temperature pairs are nulled field-wise. All anomalies
    are tallied in the returned stats.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as handle:
            return load_observations_detailed(handle)

    reader = csv.DictReader(source)
    stats = LoadStats()
    by_key: dict[tuple[str, date], WeatherObservation] = {}
    lower = {name.lower(): name for name in reader.fieldnames or []}

    def cell(row: dict, name: str) -> str:
        actual = lower.get(name)
        return row.get(actual, "") or "" if actual else ""

    for row in reader:
        stats.rows += 1
        try:
            when = date.fromisoformat(cell(row, "date").strip())
        except ValueError:
            stats.bad_dates += 1
            continue
        station = cell(row, "station").strip()
        if not station:
            stats.bad_dates += 1
            continue

        values = {name: _parse_float(cell(row, name)) for name in VARIABLE_FIELDS}
        for name in ("prcp", "snow"):
            if values[name] is not None and values[name] < 0:
                values[name] = None
                stats.negative_amounts += 1
        if (
            values["tmax"] is not None
            and values["tmin"] is not None
            and values["tmin"] > values["tmax"]
        ):
            values["tmax"] = values["tmin"] = None
            stats.inverted_temps += 1

        key = (station, when)
        if key in by_key:
            stats.duplicates += 1
        by_key[key] = WeatherObservation(station_id=station, date=when, **values)

    if stats.duplicates:
        log.warning("weather load: %d duplicate (station, date) rows, last row wins", stats.duplicates)
    observations = list(by_key.values())
    stats.kept = len(observations)
    return observations, stats


def load_observations(source: IO[str] | str | Path) -> list[WeatherObservation]:
    return load_observations_detailed(source)[0]


def load_station_map(path: str | Path | None) -> dict[str, str]:
    """Airport->station mapping from a JSON file, defaulting to the built-in ten."""
    if path is None:
        return dict(DEFAULT_STATION_MAP)
    doc = json.loads(Path(path).read_text())
    return {str(k): str(v) for k, v in doc.items()}


@dataclass(slots=True)
class ImputationMedians:
    """Per-column fallback values, computed on the training split only."""

    origin_wind: float
    origin_precip: float
    origin_snow: float
    origin_tmax: float
    origin_tmin: float

    def as_mapping(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in JOINED_COLUMNS}

    @classmethod
    def from_mapping(cls, doc: Mapping[str, float]) -> "ImputationMedians":
        return cls(**{name: float(doc[name]) for name in JOINED_COLUMNS})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.as_mapping(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ImputationMedians":
        return cls.from_mapping(json.loads(Path(path).read_text()))


def lower_median(values: Sequence[float] | np.ndarray) -> float:
    """Element at index floor((n-1)/2) of the sorted values.

    Deterministic and order-free; never interpolates between elements.
    """
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("median of empty input")
    return float(arr[(arr.size - 1) // 2])


def compute_medians(columns: Mapping[str, np.ndarray]) -> ImputationMedians:
    """Lower median of the non-null entries of each joined weather column."""
    out = {}
    for name in JOINED_COLUMNS:
        values = np.asarray(columns[name], dtype=np.float64)
        observed = values[~np.isnan(values)]
        if observed.size == 0:
            raise ValueError(f"no observed values for {name}; cannot impute")
        out[name] = lower_median(observed)
    return ImputationMedians(**out)


def index_observations(
    observations: Iterable[WeatherObservation],
) -> dict[tuple[str, date], WeatherObservation]:
    index: dict[tuple[str, date], WeatherObservation] = {}
    for obs in observations:
        index[(obs.station_id, obs.date)] = obs
    return index


def join_weather(
    records: Sequence[FlightRecord],
    observations: Iterable[WeatherObservation] | Mapping[tuple[str, date], WeatherObservation],
    station_map: Mapping[str, str] | None = None,
    medians: ImputationMedians | None = None,
) -> dict[str, np.ndarray]:
    """Attach the five origin-weather columns to each record.

    With `medians` the join is total: any miss (unmonitored airport,
    absent station-day, or null field inside a matched observation) takes
    the column median. Without `medians` (the build-time first pass)
    misses are left as NaN for later filling from the training split.
    """
    station_map = dict(station_map) if station_map is not None else dict(DEFAULT_STATION_MAP)
    index = (
        observations
        if isinstance(observations, Mapping)
        else index_observations(observations)
    )
    fallback = medians.as_mapping() if medians is not None else dict.fromkeys(JOINED_COLUMNS, np.nan)

    n = len(records)
    out = {name: np.full(n, np.nan, dtype=np.float64) for name in JOINED_COLUMNS}
    for i, record in enumerate(records):
        obs = None
        station = station_map.get(record.origin)
        if station is not None and record.year is not None and record.month is not None:
            try:
                when = date(record.year, record.month, record.day_of_month or 0)
            except ValueError:
                when = None
            if when is not None:
                obs = index.get((station, when))
        for variable, column in zip(VARIABLE_FIELDS, JOINED_COLUMNS):
            value = getattr(obs, variable) if obs is not None else None
            out[column][i] = value if value is not None else fallback[column]
    return out


def fill_missing(
    columns: Mapping[str, np.ndarray], medians: ImputationMedians
) -> dict[str, np.ndarray]:
    """Second pass: replace NaN slots with the training medians."""
    fallback = medians.as_mapping()
    filled = {}
    for name in JOINED_COLUMNS:
        values = np.asarray(columns[name], dtype=np.float64).copy()
        values[np.isnan(values)] = fallback[name]
        filled[name] = values
    return filled
