"""Rule-engine conditions, compounding, tiers, and scorer plumbing."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flightsense.scoring import (
    CONDITION_ORDER,
    DEFAULT_MULTIPLIERS,
    FileScorer,
    FlightContext,
    RiskConditions,
    RiskConfig,
    RiskConfigError,
    ShapeError,
    WeatherContext,
    compound_risk,
    detect_conditions,
    score,
    tier,
)
from flightsense.trainer import LinearModel, ModelScorer


def _conditions(**active) -> RiskConditions:
    flags = dict.fromkeys(CONDITION_ORDER, 0)
    flags.update(active)
    return RiskConditions(**flags)


def _context(**overrides) -> FlightContext:
    values = dict(origin="ATL", crs_dep_time=1200, day_of_week=2, prev_arr_delay=0.0)
    values.update(overrides)
    return FlightContext(**values)


def _weather(**overrides) -> WeatherContext:
    values = dict(wind=5.0, precip=0.0, snow=0.0, tmax=60.0, tmin=40.0)
    values.update(overrides)
    return WeatherContext(**values)


class TestDetectConditions:
    def test_windy_jfk(self):
        got = detect_conditions(_context(origin="JFK"), _weather(wind=35.3))
        assert got.high_delay_airport == 1
        assert got.high_wind == 1
        assert got.any_snow == 0

    def test_wind_boundary_strict(self):
        assert detect_conditions(_context(), _weather(wind=25.0)).high_wind == 0
        assert detect_conditions(_context(), _weather(wind=25.01)).high_wind == 1

    def test_snow_any_amount(self):
        assert detect_conditions(_context(), _weather(snow=0.0)).any_snow == 0
        assert detect_conditions(_context(), _weather(snow=0.1)).any_snow == 1

    def test_precip_boundary_strict(self):
        assert detect_conditions(_context(), _weather(precip=0.3)).heavy_precip == 0
        assert detect_conditions(_context(), _weather(precip=0.31)).heavy_precip == 1

    def test_prev_delay_boundary_strict(self):
        assert detect_conditions(_context(prev_arr_delay=15.0), _weather()).prev_aircraft_delayed == 0
        assert detect_conditions(_context(prev_arr_delay=15.5), _weather()).prev_aircraft_delayed == 1

    @pytest.mark.parametrize("dow,expected", [(1, 0), (4, 0), (5, 1), (6, 0), (7, 1)])
    def test_friday_or_sunday(self, dow, expected):
        assert detect_conditions(_context(day_of_week=dow), _weather()).friday_or_sunday == expected

    @pytest.mark.parametrize("hhmm,expected", [(559, 0), (600, 1), (1059, 1), (1100, 0), (1600, 1), (2059, 1), (2100, 0)])
    def test_peak_windows(self, hhmm, expected):
        assert detect_conditions(_context(crs_dep_time=hhmm), _weather()).peak_hours == expected

    @pytest.mark.parametrize("origin,expected", [("JFK", 1), ("ORD", 1), ("EWR", 1), ("ATL", 0)])
    def test_high_delay_airports(self, origin, expected):
        got = detect_conditions(_context(origin=origin), _weather())
        assert got.high_delay_airport == expected


class TestCompoundRisk:
    def test_no_conditions_is_base_rate(self):
        estimate = compound_risk(_conditions())
        assert estimate.probability == pytest.approx(0.19, abs=1e-12)
        assert estimate.applied == ()
        assert not estimate.capped

    def test_snow_only(self):
        estimate = compound_risk(_conditions(any_snow=1))
        assert estimate.probability == pytest.approx(0.19 * 2.10, abs=1e-12)
        assert estimate.probability == pytest.approx(0.399, abs=1e-12)

    def test_jfk_plus_wind(self):
        estimate = compound_risk(_conditions(high_delay_airport=1, high_wind=1))
        assert estimate.probability == pytest.approx(0.285, abs=1e-12)

    def test_all_seven_capped(self):
        estimate = compound_risk(_conditions(**dict.fromkeys(CONDITION_ORDER, 1)))
        product = 0.19
        for value in DEFAULT_MULTIPLIERS.values():
            product *= value
        assert product > 1  # 0.19 * 6.9932... = 1.3287...
        assert estimate.probability == pytest.approx(0.85, abs=1e-12)
        assert estimate.capped

    def test_applied_list_in_canonical_order(self):
        estimate = compound_risk(_conditions(prev_aircraft_delayed=1, any_snow=1, high_wind=1))
        assert [name for name, _ in estimate.applied] == [
            "high_wind", "any_snow", "prev_aircraft_delayed",
        ]
        assert dict(estimate.applied)["any_snow"] == 2.10

    def test_tier_attached(self):
        assert compound_risk(_conditions(any_snow=1)).tier == "low"

    def test_nonpositive_multiplier_rejected(self):
        with pytest.raises(RiskConfigError):
            RiskConfig(multipliers={**DEFAULT_MULTIPLIERS, "any_snow": 0.0})

    def test_missing_multiplier_rejected(self):
        bad = dict(DEFAULT_MULTIPLIERS)
        del bad["high_wind"]
        with pytest.raises(RiskConfigError):
            RiskConfig(multipliers=bad)

    def test_config_file_round_trip(self, tmp_path):
        path = tmp_path / "risk_config.json"
        RiskConfig().save(path)
        doc = json.loads(path.read_text())
        assert doc["base"] == 0.19
        assert doc["cap"] == 0.85
        assert doc["multipliers"]["any_snow"] == 2.10
        loaded = RiskConfig.load(path)
        assert loaded == RiskConfig()

    def test_config_overrides(self, tmp_path):
        path = tmp_path / "risk.json"
        path.write_text(json.dumps({"base": 0.25, "multipliers": {"any_snow": 3.0}}))
        config = RiskConfig.load(path)
        estimate = compound_risk(_conditions(any_snow=1), config)
        assert estimate.probability == pytest.approx(0.75, abs=1e-12)

    @given(flags=st.lists(st.booleans(), min_size=7, max_size=7))
    def test_probability_range_default_config(self, flags):
        estimate = compound_risk(RiskConditions(*[int(f) for f in flags]))
        assert 0.0 <= estimate.probability <= 0.85

    @given(flags=st.lists(st.booleans(), min_size=7, max_size=7))
    def test_removing_a_condition_never_increases_risk(self, flags):
        conditions = RiskConditions(*[int(f) for f in flags])
        base = compound_risk(conditions)
        for i, flag in enumerate(flags):
            if not flag:
                continue
            reduced_flags = list(flags)
            reduced_flags[i] = False
            reduced = compound_risk(RiskConditions(*[int(f) for f in reduced_flags]))
            assert reduced.probability <= base.probability + 1e-15

    def test_commutativity_of_condition_order(self):
        # The product cannot depend on evaluation order: recompute by
        # multiplying in every permutation of the active multipliers.
        import itertools

        estimate = compound_risk(_conditions(any_snow=1, high_wind=1, peak_hours=1))
        factors = [m for _, m in estimate.applied]
        for perm in itertools.permutations(factors):
            assert math.prod(perm) * 0.19 == pytest.approx(estimate.probability, abs=1e-12)


class TestTier:
    @pytest.mark.parametrize(
        "p,expected",
        [
            (0.75, "high"),
            (0.71, "high"),
            (0.70, "moderate"),
            (0.55, "moderate"),
            (0.50, "low"),
            (0.35, "low"),
            (0.30, "on-time"),
            (0.0, "on-time"),
        ],
    )
    def test_boundaries(self, p, expected):
        assert tier(p) == expected

    @given(st.floats(min_value=0.0, max_value=1.0))
    def test_total(self, p):
        assert tier(p) in ("high", "moderate", "low", "on-time")


class TestScorers:
    def _zero_model(self, k=3):
        return LinearModel(
            columns=[f"f{i}" for i in range(k)],
            weights=np.zeros(k),
            bias=0.0,
            mean=np.zeros(k),
            std=np.ones(k),
        )

    def test_zero_weight_model_scores_half(self):
        scorer = ModelScorer(self._zero_model())
        assert score([1.0, 2.0, 3.0], scorer) == pytest.approx(0.5)

    def test_wrong_width_vector_rejected(self):
        scorer = ModelScorer(self._zero_model(k=3))
        with pytest.raises(ShapeError):
            score([1.0, 2.0], scorer)

    def test_file_scorer_row_lookup(self, tmp_path):
        path = tmp_path / "predictions.json"
        path.write_text(json.dumps({"columns": ["a"], "predictions": [0.1, 0.7, 0.4]}))
        scorer = FileScorer(path)
        assert scorer.score_row(1) == 0.7
        batch = scorer.score_batch(np.zeros((2, 1)))
        assert batch.tolist() == [0.1, 0.7]

    def test_file_scorer_exhausted(self, tmp_path):
        path = tmp_path / "predictions.json"
        path.write_text(json.dumps({"columns": ["a"], "predictions": [0.1]}))
        with pytest.raises(ShapeError):
            FileScorer(path).score_batch(np.zeros((2, 1)))
