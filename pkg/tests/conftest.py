"""Shared builders for the test suite."""

from __future__ import annotations

import pytest

from flightsense.ingest import FlightRecord

_DEFAULTS = dict(
    year=2018,
    quarter=1,
    month=1,
    day_of_month=1,
    day_of_week=1,
    airline="AA",
    tail_number="N100",
    origin="JFK",
    dest="LAX",
    crs_dep_time=800,
    dep_time=805,
    dep_delay=5.0,
    crs_arr_time=1100,
    air_time=300.0,
    arr_delay=0.0,
    arr_del15=0,
    distance=2475.0,
    cancelled=0,
)


def make_record(**overrides) -> FlightRecord:
    values = dict(_DEFAULTS)
    values.update(overrides)
    return FlightRecord(**values)


@pytest.fixture
def record_factory():
    return make_record
