"""Synthetic corpora with planted rotation-chain and weather effects.

Each aircraft flies a physically consistent daily rotation: time-ordered,
non-overlapping legs over the ten monitored airports, with turnaround
draws straddling the tight-turnaround threshold. Delay occurrence is
Bernoulli around a base rate, boosted when the inbound leg was delayed
into a tight turnaround (the propagation plant) and per inch of snowfall
at the origin (the weather plant), so feature versions that can see those
signals are separably better. Aircraft-indexed substreams make output
deterministic for a given seed under any parallel schedule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import TIGHT_TURNAROUND_MINUTES, minutes_to_hhmm
from .ingest import FlightRecord
from .weather import DEFAULT_STATION_MAP, WeatherObservation

START_DATE = date(2018, 1, 1)

AIRLINES = ("AA", "AS", "B6", "DL", "F9", "NK", "UA", "WN")

# Rough airport coordinates for deterministic great-circle distances.
_AIRPORT_COORDS = {
    "JFK": (40.64, -73.78),
    "LAX": (33.94, -118.41),
    "ORD": (41.98, -87.90),
    "ATL": (33.64, -84.43),
    "DFW": (32.90, -97.04),
    "DEN": (39.86, -104.67),
    "SFO": (37.62, -122.38),
    "SEA": (47.45, -122.31),
    "MIA": (25.79, -80.29),
    "BOS": (42.36, -71.01),
}
AIRPORTS = tuple(sorted(_AIRPORT_COORDS))

_EARLIEST_DEP_MIN = 300   # 05:00
_LATEST_FIRST_DEP_MIN = 540  # 09:00
_TURNAROUND_RANGE = (25, 120)
_LAST_ARRIVAL_MIN = 1439


class SynthConfigError(ValueError):
    """Invalid or infeasible generator configuration."""


@dataclass(slots=True)
class SynthConfig:
    n_aircraft: int = 100
    days: int = 10
    legs_per_day: tuple[int, int] = (2, 5)
    base_delay_rate: float = 0.1912
    propagation_strength: float = 0.0
    weather_effect: float = 0.0     # delay-probability boost per inch of origin snow
    airline_effect: float = 0.0     # spread of per-carrier base-rate offsets
    snow_probability: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        for name in ("base_delay_rate", "propagation_strength", "snow_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise SynthConfigError(f"{name} must be in [0, 1], got {value}")
        if self.weather_effect < 0 or self.airline_effect < 0:
            raise SynthConfigError("effect strengths must be non-negative")
        if self.n_aircraft < 1 or self.days < 1:
            raise SynthConfigError("need at least one aircraft and one day")
        lo, hi = self.legs_per_day
        if not 1 <= lo <= hi:
            raise SynthConfigError(f"bad legs_per_day range {self.legs_per_day}")
        # Even with the shortest legs and turnarounds, the minimum legs must
        # fit between the earliest departure and end of day.
        min_block = min(
            _block_minutes(a, b) for a in AIRPORTS for b in AIRPORTS if a != b
        )
        needed = _EARLIEST_DEP_MIN + lo * min_block + (lo - 1) * _TURNAROUND_RANGE[0]
        if needed > _LAST_ARRIVAL_MIN:
            raise SynthConfigError(
                f"cannot pack {lo} legs into one day (needs {needed} min of {_LAST_ARRIVAL_MIN})"
            )


def _distance_miles(a: str, b: str) -> int:
    lat1, lon1 = _AIRPORT_COORDS[a]
    lat2, lon2 = _AIRPORT_COORDS[b]
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return round(3958.8 * 2 * math.asin(math.sqrt(h)))


def _air_minutes(dist: int) -> int:
    return round(dist / 8) + 20  # ~480 mph cruise plus climb/descent


def _block_minutes(a: str, b: str) -> int:
    return _air_minutes(_distance_miles(a, b)) + 15  # taxi buffer


_DISTANCES = {(a, b): _distance_miles(a, b) for a in AIRPORTS for b in AIRPORTS if a != b}


def generate_weather(config: SynthConfig) -> list[WeatherObservation]:
    """One observation per station per day, all fields populated."""
    rng = np.random.default_rng((config.seed, 10**9))
    observations = []
    for airport in AIRPORTS:
        station = DEFAULT_STATION_MAP[airport]
        for offset in range(config.days):
            day = START_DATE + timedelta(days=offset)
            snowing = rng.random() < config.snow_probability
            snow = round(float(rng.exponential(2.0)) + 0.2, 1) if snowing else 0.0
            raining = rng.random() < 0.3
            prcp = round(float(rng.exponential(0.3)), 2) if raining else 0.0
            tmax = round(float(rng.normal(55.0, 18.0)), 1)
            tmin = round(tmax - float(rng.uniform(8.0, 25.0)), 1)
            observations.append(
                WeatherObservation(
                    station_id=station,
                    date=day,
                    awnd=round(float(rng.uniform(2.0, 32.0)), 1),
                    prcp=prcp,
                    snow=snow,
                    tmax=tmax,
                    tmin=tmin,
                )
            )
    return observations


def _snow_index(observations: Sequence[WeatherObservation]) -> dict[tuple[str, date], float]:
    return {(o.station_id, o.date): o.snow or 0.0 for o in observations}


def generate(config: SynthConfig) -> tuple[list[FlightRecord], list[WeatherObservation]]:
    """Build a full corpus: rotation-consistent flights plus daily weather."""
    config.validate()
    observations = generate_weather(config)
    snow_by_key = _snow_index(observations)
    n_airports = len(AIRPORTS)

    records: list[FlightRecord] = []
    for i in range(config.n_aircraft):
        rng = np.random.default_rng((config.seed, i))
        tail = f"N{i:05d}"
        airline = AIRLINES[i % len(AIRLINES)]
        if config.airline_effect and len(AIRLINES) > 1:
            k = i % len(AIRLINES)
            airline_offset = config.airline_effect * (k / (len(AIRLINES) - 1) - 0.5)
        else:
            airline_offset = 0.0
        current = AIRPORTS[int(rng.integers(n_airports))]

        for offset in range(config.days):
            day = START_DATE + timedelta(days=offset)
            legs_target = int(rng.integers(config.legs_per_day[0], config.legs_per_day[1] + 1))
            dep_min = int(rng.integers(_EARLIEST_DEP_MIN, _LATEST_FIRST_DEP_MIN + 1))
            prev_arr_delay: float | None = None
            turnaround: int | None = None

            for _ in range(legs_target):
                candidates = [
                    a for a in AIRPORTS
                    if a != current and dep_min + _block_minutes(current, a) <= _LAST_ARRIVAL_MIN
                ]
                if not candidates:
                    break
                dest = candidates[int(rng.integers(len(candidates)))]
                dist = _DISTANCES[(current, dest)]
                air_time = _air_minutes(dist)
                arr_min = dep_min + air_time + 15

                p = config.base_delay_rate + airline_offset
                if (
                    prev_arr_delay is not None
                    and turnaround is not None
                    and prev_arr_delay > 15
                    and turnaround < TIGHT_TURNAROUND_MINUTES
                ):
                    p += config.propagation_strength
                p += config.weather_effect * snow_by_key[(DEFAULT_STATION_MAP[current], day)]
                p = min(max(p, 0.0), 0.999)

                if rng.random() < p:
                    arr_delay = 15 + int(rng.exponential(25.0))
                else:
                    arr_delay = int(round(rng.uniform(-14.4, 14.4)))
                dep_delay = arr_delay + int(round(rng.uniform(-8.0, 8.0)))

                records.append(
                    FlightRecord(
                        year=day.year,
                        quarter=(day.month - 1) // 3 + 1,
                        month=day.month,
                        day_of_month=day.day,
                        day_of_week=day.isoweekday(),
                        airline=airline,
                        tail_number=tail,
                        origin=current,
                        dest=dest,
                        crs_dep_time=minutes_to_hhmm(dep_min),
                        dep_time=minutes_to_hhmm(dep_min + dep_delay),
                        dep_delay=float(dep_delay),
                        crs_arr_time=minutes_to_hhmm(arr_min),
                        air_time=float(air_time),
                        arr_delay=float(arr_delay),
                        arr_del15=1 if arr_delay >= 15 else 0,
                        distance=float(dist),
                        cancelled=0,
                    )
                )

                turnaround = int(rng.integers(_TURNAROUND_RANGE[0], _TURNAROUND_RANGE[1] + 1))
                prev_arr_delay = float(arr_delay)
                dep_min = arr_min + turnaround
                current = dest
                if dep_min > _LAST_ARRIVAL_MIN:
                    break
    return records, observations


_FLIGHT_HEADER = (
    "Year,Quarter,Month,DayofMonth,DayOfWeek,Reporting_Airline,Tail_Number,Origin,Dest,"
    "CRSDepTime,DepTime,DepDelay,CRSArrTime,AirTime,ArrDelay,ArrDel15,Distance,Cancelled"
)


def write_flight_csvs(records: Sequence[FlightRecord], out_dir: str | Path) -> list[Path]:
    """Write records as one ingest-compatible CSV per month."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_month: dict[int, list[FlightRecord]] = {}
    for r in records:
        by_month.setdefault(r.month or 0, []).append(r)

    paths = []
    for month in sorted(by_month):
        path = out_dir / f"flights_{month:02d}.csv"
        with open(path, "w", newline="", encoding="utf-8") as out:
            writer = csv.writer(out)
            writer.writerow(_FLIGHT_HEADER.split(","))
            for r in by_month[month]:
                writer.writerow([
                    r.year, r.quarter, r.month, r.day_of_month, r.day_of_week,
                    r.airline, r.tail_number, r.origin, r.dest,
                    f"{r.crs_dep_time:04d}", f"{r.dep_time:04d}", int(r.dep_delay),
                    f"{r.crs_arr_time:04d}", int(r.air_time), int(r.arr_delay),
                    r.arr_del15, int(r.distance), r.cancelled,
                ])
        paths.append(path)
    return paths


def write_weather_csv(observations: Sequence[WeatherObservation], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as out:
        writer = csv.writer(out)
        writer.writerow(["STATION", "DATE", "AWND", "PRCP", "SNOW", "TMAX", "TMIN"])
        for o in observations:
            writer.writerow([
                o.station_id, o.date.isoformat(),
                o.awnd, o.prcp, o.snow, o.tmax, o.tmin,
            ])
    return path
