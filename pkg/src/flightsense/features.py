"""Rotation-chain reconstruction and progressive feature building.

An aircraft's day is the ordered sequence of legs flown by one tail
number on one calendar date. Sorting by (tail, month, day, scheduled
departure) lines those legs up so each flight's upstream context --
previous arrival delay, turnaround slack, accumulated daily delay -- can
be computed with shifted/cumulative passes and no per-row lookback.

Feature versions build on each other:
  v1: schedule columns plus a holiday flag (11 columns)
  v2: v1 plus six chain-propagation, three time-of-day, and two
      aggregate delay-rate columns (22 columns)
  v3: v2 plus the five origin-weather columns (27 columns)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import FlightRecord

# Ground time below this (minutes) cannot absorb a moderate inbound delay.
TIGHT_TURNAROUND_MINUTES = 45
# Inbound delay above this (minutes) marks the previous flight as delayed.
PREV_DELAY_THRESHOLD_MINUTES = 15
# Raw turnaround below this is a midnight crossing; add a day.
OVERNIGHT_WRAP_THRESHOLD = -60
MINUTES_PER_DAY = 1440

# Holiday calendars as (month, day) pairs for the served year.
HOLIDAYS_BASELINE = frozenset({
    (1, 1), (1, 2), (7, 4), (11, 11), (11, 25), (11, 26),
    (11, 27), (11, 28), (12, 25), (12, 26), (12, 31),
})
HOLIDAYS_EXPANDED = frozenset({
    (1, 1), (1, 2), (1, 15), (2, 19), (5, 28), (7, 3), (7, 4),
    (7, 5), (9, 3), (11, 21), (11, 22), (11, 23), (11, 25),
    (11, 26), (12, 24), (12, 25), (12, 26), (12, 31),
})

V1_COLUMNS: tuple[str, ...] = (
    "Year", "Quarter", "Month", "DayofMonth", "DayOfWeek",
    "Airline", "Origin", "Dest", "AirTime", "Distance", "is_holiday",
)
V2_EXTRA_COLUMNS: tuple[str, ...] = (
    "prev_arr_delay", "prev_was_delayed", "turnaround", "tight_turnaround",
    "is_first_flight", "tail_daily_delay",
    "dep_hour", "is_peak_hour", "is_early_morning",
    "route_delay_rate", "airline_delay_rate",
)
WEATHER_COLUMNS: tuple[str, ...] = (
    "origin_wind", "origin_precip", "origin_snow", "origin_tmax", "origin_tmin",
)
CATEGORICAL_COLUMNS: tuple[str, ...] = ("Airline", "Origin", "Dest")

# Post-departure columns that must never appear in a feature matrix.
FORBIDDEN_FEATURE_COLUMNS = frozenset({
    "Tail_Number", "ArrDelay", "DepDelay", "CRSDepTime", "CRSArrTime", "DepTime",
    "CarrierDelay", "WeatherDelay", "NASDelay", "SecurityDelay", "LateAircraftDelay",
})


class ChainOrderError(ValueError):
    """Input records violate the (tail, month, day, dep time) sort order."""


class LeakageError(AssertionError):
    """A post-departure column leaked into an assembled feature matrix."""


@dataclass(frozen=True, slots=True)
class ChainKey:
    """Identity of one aircraft-day; all per-day features group on this."""

    tail_number: str
    month: int
    day_of_month: int


def chain_key(record: FlightRecord) -> ChainKey:
    if not record.tail_number or record.month is None or record.day_of_month is None:
        raise ValueError("record lacks the tail/month/day fields needed for chain grouping")
    return ChainKey(record.tail_number, record.month, record.day_of_month)


@dataclass(slots=True)
class PropagationFeatures:
    """Upstream-context features for one flight leg."""

    prev_arr_delay: float
    prev_was_delayed: int
    turnaround: int
    tight_turnaround: int
    is_first_flight: int
    tail_daily_delay: float


def hhmm_to_minutes(hhmm: int) -> int:
    """Convert an HHMM clock integer to minutes since midnight."""
    if not 0 <= hhmm <= 2359:
        raise ValueError(f"HHMM value out of range 0..2359: {hhmm}")
    return (hhmm // 100) * 60 + hhmm % 100


def minutes_to_hhmm(minutes: int) -> int:
    minutes %= MINUTES_PER_DAY
    return (minutes // 60) * 100 + minutes % 60


def _chain_sort_key(r: FlightRecord):
    return (
        r.tail_number or "",
        r.month if r.month is not None else -1,
        r.day_of_month if r.day_of_month is not None else -1,
        r.crs_dep_time if r.crs_dep_time is not None else -1,
    )


def chain_order(records: Sequence[FlightRecord]) -> list[int]:
    """Indices that put records into rotation-chain order (stable)."""
    return sorted(range(len(records)), key=lambda i: _chain_sort_key(records[i]))


def sort_chains(records: Sequence[FlightRecord]) -> list[FlightRecord]:
    """Stable sort into rotation-chain order.

    Keys: tail number, month, day of month, scheduled departure. Exact
    duplicates keep their input order, which pins down every downstream
    artifact byte-for-byte.
    """
    return sorted(records, key=_chain_sort_key)


def _chain_group_arrays(records: Sequence[FlightRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Return (new_group flags, dep minutes) after validating sort order."""
    n = len(records)
    tail = np.array([r.tail_number or "" for r in records])
    month = np.array([-1 if r.month is None else r.month for r in records], dtype=np.int64)
    day = np.array(
        [-1 if r.day_of_month is None else r.day_of_month for r in records], dtype=np.int64
    )
    dep = np.array(
        [-1 if r.crs_dep_time is None else r.crs_dep_time for r in records], dtype=np.int64
    )

    if n > 1:
        t0, t1 = tail[:-1], tail[1:]
        m0, m1 = month[:-1], month[1:]
        d0, d1 = day[:-1], day[1:]
        p0, p1 = dep[:-1], dep[1:]
        decreasing = (t1 < t0) | (
            (t1 == t0) & ((m1 < m0) | ((m1 == m0) & ((d1 < d0) | ((d1 == d0) & (p1 < p0)))))
        )
        if decreasing.any():
            where = int(np.nonzero(decreasing)[0][0]) + 1
            raise ChainOrderError(f"records not in chain order at index {where}")

    new_group = np.ones(n, dtype=bool)
    if n > 1:
        new_group[1:] = (tail[1:] != tail[:-1]) | (month[1:] != month[:-1]) | (day[1:] != day[:-1])

    dep_min = (dep // 100) * 60 + dep % 100
    dep_min[dep < 0] = -1
    return new_group, dep_min


def propagation_columns(records: Sequence[FlightRecord]) -> dict[str, np.ndarray]:
    """Vectorized chain-propagation features over chain-sorted records.

    A flight's values depend only on strictly earlier legs of the same
    aircraft-day; the first leg of each day gets all-zero context. A null
    upstream arrival delay contributes zero. A missing upstream scheduled
    arrival leaves turnaround at zero with the tight flag off.
    """
    n = len(records)
    new_group, dep_min = _chain_group_arrays(records)

    arr_delay = np.array(
        [0.0 if r.arr_delay is None else r.arr_delay for r in records], dtype=np.float64
    )
    arr_hhmm = np.array(
        [-1 if r.crs_arr_time is None else r.crs_arr_time for r in records], dtype=np.int64
    )
    arr_min = (arr_hhmm // 100) * 60 + arr_hhmm % 100
    arr_min[arr_hhmm < 0] = -1

    prev_arr = np.concatenate(([0.0], arr_delay[:-1])) if n else np.zeros(0)
    prev_arr[new_group] = 0.0

    prev_arr_min = np.concatenate(([-1], arr_min[:-1])) if n else np.zeros(0, dtype=np.int64)
    prev_known = (~new_group) & (prev_arr_min >= 0) & (dep_min >= 0)
    raw = dep_min - prev_arr_min
    wrapped = np.where(raw < OVERNIGHT_WRAP_THRESHOLD, raw + MINUTES_PER_DAY, raw)
    turnaround = np.where(prev_known, wrapped, 0).astype(np.int64)
    tight = (prev_known & (turnaround < TIGHT_TURNAROUND_MINUTES)).astype(np.int8)

    # Shifted within-day cumulative sum: delay accrued by prior legs.
    cumsum = np.cumsum(arr_delay)
    prior = np.concatenate(([0.0], cumsum[:-1])) if n else np.zeros(0)
    idx = np.arange(n)
    group_start = np.maximum.accumulate(np.where(new_group, idx, -1))
    tail_daily = prior - prior[group_start] if n else np.zeros(0)

    return {
        "prev_arr_delay": prev_arr,
        "prev_was_delayed": (prev_arr > PREV_DELAY_THRESHOLD_MINUTES).astype(np.int8),
        "turnaround": turnaround,
        "tight_turnaround": tight,
        "is_first_flight": new_group.astype(np.int8),
        "tail_daily_delay": tail_daily,
    }


def compute_propagation(records: Sequence[FlightRecord]) -> list[PropagationFeatures]:
    cols = propagation_columns(records)
    return [
        PropagationFeatures(
            prev_arr_delay=float(cols["prev_arr_delay"][i]),
            prev_was_delayed=int(cols["prev_was_delayed"][i]),
            turnaround=int(cols["turnaround"][i]),
            tight_turnaround=int(cols["tight_turnaround"][i]),
            is_first_flight=int(cols["is_first_flight"][i]),
            tail_daily_delay=float(cols["tail_daily_delay"][i]),
        )
        for i in range(len(records))
    ]


def compute_time_features(crs_dep_time: int) -> tuple[int, int, int]:
    """(dep_hour, is_peak_hour, is_early_morning) from a scheduled HHMM.

    Peak windows are 06-10 and 16-20 inclusive on both ends; early
    morning is any departure before 07:00.
    """
    dep_hour = min(max(crs_dep_time // 100, 0), 23)
    is_peak = 1 if (6 <= dep_hour <= 10) or (16 <= dep_hour <= 20) else 0
    is_early = 1 if dep_hour < 7 else 0
    return dep_hour, is_peak, is_early


def is_holiday(version: int, month: int, day: int) -> int:
    """Membership of (month, day) in the v1 (11-date) or v2 (18-date) calendar."""
    if version == 1:
        return 1 if (month, day) in HOLIDAYS_BASELINE else 0
    if version == 2:
        return 1 if (month, day) in HOLIDAYS_EXPANDED else 0
    raise ValueError(f"holiday calendar version must be 1 or 2, got {version}")


@dataclass(slots=True)
class RateTable:
    """Historical delay rates keyed by route and by airline.

    Rates are exact count ratios (delayed/total), so the table is
    invariant to the order of the build records. Unseen keys fall back
    to the global rate.
    """

    route_rates: dict[tuple[str, str], float]
    airline_rates: dict[str, float]
    global_rate: float

    def route(self, origin: str, dest: str) -> float:
        return self.route_rates.get((origin, dest), self.global_rate)

    def airline(self, airline: str) -> float:
        return self.airline_rates.get(airline, self.global_rate)

    def to_json(self) -> dict:
        return {
            "global": self.global_rate,
            "routes": {f"{o}-{d}": r for (o, d), r in sorted(self.route_rates.items())},
            "airlines": dict(sorted(self.airline_rates.items())),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "RateTable":
        routes = {}
        for key, rate in doc["routes"].items():
            origin, _, dest = key.partition("-")
            routes[(origin, dest)] = float(rate)
        return cls(
            route_rates=routes,
            airline_rates={k: float(v) for k, v in doc["airlines"].items()},
            global_rate=float(doc["global"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "RateTable":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_rate_table(records: Iterable[FlightRecord]) -> RateTable:
    """Aggregate delayed/total counts per route and per airline."""
    route_counts: dict[tuple[str, str], list[int]] = {}
    airline_counts: dict[str, list[int]] = {}
    delayed = total = 0
    for r in records:
        if r.arr_del15 is None:
            continue
        total += 1
        delayed += r.arr_del15
        rc = route_counts.setdefault((r.origin, r.dest), [0, 0])
        rc[0] += r.arr_del15
        rc[1] += 1
        ac = airline_counts.setdefault(r.airline, [0, 0])
        ac[0] += r.arr_del15
        ac[1] += 1
    if total == 0:
        raise ValueError("cannot build a rate table from records without targets")
    return RateTable(
        route_rates={k: d / t for k, (d, t) in route_counts.items()},
        airline_rates={k: d / t for k, (d, t) in airline_counts.items()},
        global_rate=delayed / total,
    )


def apply_rates(record: FlightRecord, table: RateTable) -> tuple[float, float]:
    return table.route(record.origin, record.dest), table.airline(record.airline)


@dataclass(slots=True)
class FeatureTable:
    """Assembled feature columns prior to categorical encoding.

    `numeric` holds float arrays, `categorical` raw string columns; the
    manifest fixes column order for every downstream artifact.
    """

    version: int
    columns: list[str]
    numeric: dict[str, np.ndarray]
    categorical: dict[str, list[str]]
    target: np.ndarray
    holiday_version: int = field(default=2)

    def __len__(self) -> int:
        return len(self.target)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


def assemble_features(
    version: int,
    records: Sequence[FlightRecord],
    rate_table: RateTable | None = None,
    holiday_version: int | None = None,
    weather: Mapping[str, np.ndarray] | None = None,
) -> FeatureTable:
    """Build the feature table for one version from chain-sorted records.

    v1 needs only the records; v2/v3 additionally need a rate table, and
    v3 the five origin-weather arrays aligned with `records`. The holiday
    calendar defaults to v1's for version 1 and the expanded one above.
    Raises `LeakageError` if any post-departure column would be emitted.
    """
    _require(version in (1, 2, 3), f"unknown feature version {version}")
    if holiday_version is None:
        holiday_version = 1 if version == 1 else 2
    n = len(records)

    targets = np.empty(n, dtype=np.int8)
    for i, r in enumerate(records):
        _require(r.arr_del15 is not None, f"record {i} has no target; run cleaning first")
        _require(r.crs_dep_time is not None, f"record {i} has no scheduled departure")
        targets[i] = r.arr_del15

    numeric: dict[str, np.ndarray] = {}
    categorical: dict[str, list[str]] = {}

    def col(name: str, values, dtype=np.float64) -> None:
        numeric[name] = np.asarray(values, dtype=dtype)

    col("Year", [r.year if r.year is not None else 0 for r in records])
    col("Quarter", [r.quarter if r.quarter is not None else 0 for r in records])
    col("Month", [r.month if r.month is not None else 0 for r in records])
    col("DayofMonth", [r.day_of_month if r.day_of_month is not None else 0 for r in records])
    col("DayOfWeek", [r.day_of_week if r.day_of_week is not None else 0 for r in records])
    categorical["Airline"] = [r.airline for r in records]
    categorical["Origin"] = [r.origin for r in records]
    categorical["Dest"] = [r.dest for r in records]
    # Post-cleaning stragglers with no air time get a neutral zero fill.
    col("AirTime", [r.air_time if r.air_time is not None else 0.0 for r in records])
    col("Distance", [r.distance if r.distance is not None else 0.0 for r in records])
    col(
        "is_holiday",
        [
            is_holiday(holiday_version, r.month, r.day_of_month)
            if r.month is not None and r.day_of_month is not None
            else 0
            for r in records
        ],
    )

    columns = list(V1_COLUMNS)
    if version >= 2:
        _require(rate_table is not None, "versions 2 and 3 need a rate table")
        numeric.update(propagation_columns(records))
        hours = np.empty(n, dtype=np.float64)
        peak = np.empty(n, dtype=np.float64)
        early = np.empty(n, dtype=np.float64)
        route_rate = np.empty(n, dtype=np.float64)
        airline_rate = np.empty(n, dtype=np.float64)
        for i, r in enumerate(records):
            hours[i], peak[i], early[i] = compute_time_features(r.crs_dep_time)
            route_rate[i], airline_rate[i] = apply_rates(r, rate_table)
        numeric["dep_hour"] = hours
        numeric["is_peak_hour"] = peak
        numeric["is_early_morning"] = early
        numeric["route_delay_rate"] = route_rate
        numeric["airline_delay_rate"] = airline_rate
        columns += list(V2_EXTRA_COLUMNS)

    if version == 3:
        _require(weather is not None, "version 3 needs joined weather columns")
        for name in WEATHER_COLUMNS:
            _require(name in weather, f"missing weather column {name}")
            values = np.asarray(weather[name], dtype=np.float64)
            _require(len(values) == n, f"weather column {name} is misaligned")
            numeric[name] = values
        columns += list(WEATHER_COLUMNS)

    leaked = FORBIDDEN_FEATURE_COLUMNS.intersection(columns)
    if leaked:
        raise LeakageError(f"post-departure column(s) in feature output: {sorted(leaked)}")

    ordered_numeric = {name: numeric[name] for name in columns if name not in categorical}
    return FeatureTable(
        version=version,
        columns=columns,
        numeric=ordered_numeric,
        categorical=categorical,
        target=targets,
        holiday_version=holiday_version,
    )
