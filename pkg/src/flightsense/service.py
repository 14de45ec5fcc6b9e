"""HTTP surface: prediction, weather lookups, and metrics.

The service loads pipeline artifacts (model, category mappings, rate
table, imputation medians, risk config, weather observations) and exposes
them as JSON endpoints. Each prediction assembles the model feature
vector with the same feature functions the offline pipeline uses, scores
it with the model (when one is loaded) and with the rule engine, and
reports the weather values it used with their provenance. The weather
store can refresh from a drop directory of observation CSVs; refresh
swaps one snapshot reference, so in-flight requests keep a consistent
view.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import features, scoring, trainer, weather

log = logging.getLogger(__name__)

DEFAULT_YEAR = 2018
DEFAULT_RECENT_DAYS = 7

ENV_PORT = "FLIGHTSENSE_PORT"
ENV_MODEL = "FLIGHTSENSE_MODEL"
ENV_WEATHER_DIR = "FLIGHTSENSE_WEATHER_DIR"
ENV_RISK_CONFIG = "FLIGHTSENSE_RISK_CONFIG"

_OVERRIDE_FIELDS = ("wind", "precip", "snow", "tmax", "tmin")
_FIELD_TO_COLUMN = dict(zip(_OVERRIDE_FIELDS, weather.JOINED_COLUMNS))


class ApiError(Exception):
    """Error carrying the HTTP status and the wire error shape."""

    def __init__(self, status_code: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status_code = status_code
        self.code = code
        self.message = message
        self.field = field

    def payload(self) -> dict:
        doc = {"error": self.code, "message": self.message}
        if self.field:
            doc["field"] = self.field
        return doc


def _validation_error(message: str, field: str) -> ApiError:
    return ApiError(400, "validation_error", message, field)


@dataclass(slots=True)
class _Snapshot:
    by_station: dict[str, list[weather.WeatherObservation]]
    by_key: dict[tuple[str, date], weather.WeatherObservation]


def _build_snapshot(observations: Sequence[weather.WeatherObservation]) -> _Snapshot:
    by_key: dict[tuple[str, date], weather.WeatherObservation] = {}
    for obs in observations:
        by_key[(obs.station_id, obs.date)] = obs
    by_station: dict[str, list[weather.WeatherObservation]] = {}
    for obs in sorted(by_key.values(), key=lambda o: (o.station_id, o.date)):
        by_station.setdefault(obs.station_id, []).append(obs)
    return _Snapshot(by_station=by_station, by_key=by_key)


class WeatherStore:
    """Read-mostly observation store with atomic drop-directory refresh.

    Base observations come from the initial load; files appearing in the
    drop directory are layered on top (sorted by name, later files win on
    duplicate station-days). `snapshot()` hands back one immutable view;
    a refresh never mutates a snapshot already handed out.
    """

    def __init__(
        self,
        observations: Sequence[weather.WeatherObservation] = (),
        drop_dir: str | Path | None = None,
    ):
        self._base = list(observations)
        self._drop_dir = Path(drop_dir) if drop_dir else None
        self._signature: tuple | None = None
        self._snapshot = _build_snapshot(self._base)
        self.refresh()

    def _scan(self) -> tuple:
        assert self._drop_dir is not None
        entries = []
        if self._drop_dir.is_dir():
            for path in sorted(self._drop_dir.glob("*.csv")):
                stat = path.stat()
                entries.append((path.name, stat.st_mtime_ns, stat.st_size))
        return tuple(entries)

    def refresh(self) -> bool:
        """Reload from the drop directory if its contents changed."""
        if self._drop_dir is None:
            return False
        signature = self._scan()
        if signature == self._signature:
            return False
        merged = list(self._base)
        for path in sorted(self._drop_dir.glob("*.csv")):
            try:
                merged.extend(weather.load_observations(path))
            except Exception:
                log.warning("skipping unreadable weather drop %s", path, exc_info=True)
        self._snapshot = _build_snapshot(merged)  # atomic reference swap
        self._signature = signature
        log.info("weather store refreshed: %d station-days", len(self._snapshot.by_key))
        return True

    def snapshot(self) -> _Snapshot:
        self.refresh()
        return self._snapshot


@dataclass(slots=True)
class ServiceContext:
    """Artifacts and configuration one service instance runs with."""

    model: trainer.LinearModel | None = None
    encoding: Any = None                    # dataset.EncodingMap
    rate_table: features.RateTable | None = None
    medians: weather.ImputationMedians | None = None
    risk: scoring.RiskConfig = field(default_factory=scoring.RiskConfig)
    station_map: dict[str, str] = field(default_factory=lambda: dict(weather.DEFAULT_STATION_MAP))
    store: WeatherStore = field(default_factory=WeatherStore)
    year: int = DEFAULT_YEAR
    report_path: Path | None = None


def load_context(
    artifacts_dir: str | Path | None = None,
    model_path: str | Path | None = None,
    mappings_path: str | Path | None = None,
    rates_path: str | Path | None = None,
    medians_path: str | Path | None = None,
    stations_path: str | Path | None = None,
    risk_path: str | Path | None = None,
    weather_path: str | Path | None = None,
    weather_dir: str | Path | None = None,
    report_path: str | Path | None = None,
    year: int = DEFAULT_YEAR,
) -> ServiceContext:
    """Assemble a context from artifact files.

    `artifacts_dir` supplies conventional filenames (model.json,
    category_mappings.json, rate_table.json, imputation_medians.json,
    risk_config.json, report.json, weather.csv); explicit paths override.
    Environment variables FLIGHTSENSE_MODEL / FLIGHTSENSE_WEATHER_DIR /
    FLIGHTSENSE_RISK_CONFIG fill any remaining gaps.
    """
    from .dataset import EncodingMap

    def pick(explicit, env_var, conventional) -> Path | None:
        if explicit:
            return Path(explicit)
        if env_var and os.environ.get(env_var):
            return Path(os.environ[env_var])
        if artifacts_dir and conventional:
            candidate = Path(artifacts_dir) / conventional
            if candidate.exists():
                return candidate
        return None

    model_file = pick(model_path, ENV_MODEL, "model.json")
    mappings_file = pick(mappings_path, None, "category_mappings.json")
    rates_file = pick(rates_path, None, "rate_table.json")
    medians_file = pick(medians_path, None, "imputation_medians.json")
    risk_file = pick(risk_path, ENV_RISK_CONFIG, "risk_config.json")
    stations_file = pick(stations_path, None, "stations.json")
    report_file = pick(report_path, None, "report.json")
    weather_file = pick(weather_path, None, "weather.csv")
    drop_dir = weather_dir or os.environ.get(ENV_WEATHER_DIR) or None

    observations = weather.load_observations(weather_file) if weather_file else []
    return ServiceContext(
        model=trainer.LinearModel.load(model_file) if model_file else None,
        encoding=EncodingMap.load(mappings_file) if mappings_file else None,
        rate_table=features.RateTable.load(rates_file) if rates_file else None,
        medians=weather.ImputationMedians.load(medians_file) if medians_file else None,
        risk=scoring.RiskConfig.load(risk_file) if risk_file else scoring.RiskConfig(),
        station_map=weather.load_station_map(stations_file),
        store=WeatherStore(observations, drop_dir=drop_dir),
        year=year,
        report_path=report_file,
    )


# -- request validation ------------------------------------------------------


def _need(body: Mapping, name: str):
    if name not in body:
        raise _validation_error(f"{name} is required", name)
    return body[name]


def _as_number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _validation_error(f"{name} must be a number", name)
    return float(value)


def _as_hhmm(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _validation_error(f"{name} must be an HHMM integer", name)
    if value == 2400:
        return 2359
    if not 0 <= value <= 2359 or value % 100 > 59:
        raise _validation_error(f"{name} is not a valid HHMM clock value", name)
    return value


def _as_iata(value, name: str) -> str:
    if not isinstance(value, str) or len(value.strip()) != 3 or not value.strip().isalpha():
        raise _validation_error(f"{name} must be a 3-letter airport code", name)
    return value.strip().upper()


@dataclass(slots=True)
class ParsedRequest:
    airline: str
    origin: str
    dest: str
    when: date
    crs_dep_time: int
    distance: float
    air_time: float
    prev_arr_delay: float
    turnaround: int | None
    is_first_flight: bool
    overrides: dict[str, float]


def parse_predict_request(body: Mapping, year: int) -> ParsedRequest:
    if not isinstance(body, Mapping):
        raise ApiError(400, "validation_error", "request body must be a JSON object")
    airline = _need(body, "airline")
    if not isinstance(airline, str) or not airline.strip():
        raise _validation_error("airline must be a non-empty string", "airline")
    origin = _as_iata(_need(body, "origin"), "origin")
    dest = _as_iata(_need(body, "dest"), "dest")

    raw_date = _need(body, "date")
    try:
        when = date.fromisoformat(str(raw_date))
    except ValueError:
        raise _validation_error(f"not a valid calendar date: {raw_date!r}", "date") from None
    if when.year != year:
        raise _validation_error(f"date must fall in the served year {year}", "date")

    crs_dep_time = _as_hhmm(_need(body, "crs_dep_time"), "crs_dep_time")
    distance = _as_number(_need(body, "distance"), "distance")
    air_time = _as_number(_need(body, "air_time"), "air_time")
    if distance < 0:
        raise _validation_error("distance must be non-negative", "distance")
    if air_time < 0:
        raise _validation_error("air_time must be non-negative", "air_time")

    prev_given = "prev_arr_delay" in body
    turnaround_given = "turnaround" in body and body["turnaround"] is not None
    prev_arr_delay = _as_number(body["prev_arr_delay"], "prev_arr_delay") if prev_given else 0.0
    turnaround = None
    if turnaround_given:
        raw_turn = body["turnaround"]
        if isinstance(raw_turn, bool) or not isinstance(raw_turn, int):
            raise _validation_error("turnaround must be an integer minute count", "turnaround")
        turnaround = raw_turn

    overrides: dict[str, float] = {}
    raw_overrides = body.get("overrides") or {}
    if not isinstance(raw_overrides, Mapping):
        raise _validation_error("overrides must be an object", "overrides")
    for key, value in raw_overrides.items():
        if key not in _OVERRIDE_FIELDS:
            raise _validation_error(
                f"unknown override {key!r}; expected one of {', '.join(_OVERRIDE_FIELDS)}",
                "overrides",
            )
        overrides[key] = _as_number(value, f"overrides.{key}")

    return ParsedRequest(
        airline=airline.strip(),
        origin=origin,
        dest=dest,
        when=when,
        crs_dep_time=crs_dep_time,
        distance=distance,
        air_time=air_time,
        prev_arr_delay=prev_arr_delay,
        turnaround=turnaround,
        # No rotation context at all means a first leg of the day.
        is_first_flight=not (prev_given or turnaround_given),
        overrides=overrides,
    )


# -- prediction assembly ------------------------------------------------------


def _resolve_weather(
    ctx: ServiceContext, snapshot: _Snapshot, req: ParsedRequest
) -> tuple[dict[str, float], dict[str, dict]]:
    """Per-field values with provenance: override > observed > imputed."""
    station = ctx.station_map.get(req.origin)
    obs = snapshot.by_key.get((station, req.when)) if station else None
    values: dict[str, float] = {}
    used: dict[str, dict] = {}
    for request_field, variable in zip(_OVERRIDE_FIELDS, weather.VARIABLE_FIELDS):
        if request_field in req.overrides:
            value, source = req.overrides[request_field], "override"
        else:
            observed = getattr(obs, variable) if obs is not None else None
            if observed is not None:
                value, source = float(observed), "observed"
            else:
                if ctx.medians is None:
                    raise ApiError(
                        500,
                        "configuration_error",
                        f"no observation for {req.origin} on {req.when} and no "
                        f"imputation medians loaded (field {request_field})",
                    )
                value = ctx.medians.as_mapping()[_FIELD_TO_COLUMN[request_field]]
                source = "imputed"
        values[request_field] = value
        used[request_field] = {"value": value, "source": source}
    return values, used


def _model_features(
    ctx: ServiceContext, req: ParsedRequest, weather_values: Mapping[str, float]
) -> dict[str, float]:
    """Candidate values for every feature column the model might want."""
    if ctx.encoding is None or ctx.rate_table is None:
        raise ApiError(
            500, "configuration_error", "model is loaded but encoding or rate table is missing"
        )
    manifest = set(ctx.model.columns) if ctx.model else set()
    holiday_version = 2 if manifest.intersection(features.V2_EXTRA_COLUMNS) else 1

    dep_hour, is_peak, is_early = features.compute_time_features(req.crs_dep_time)
    if req.is_first_flight or req.turnaround is None:
        turnaround, tight = 0, 0
    else:
        turnaround = req.turnaround
        tight = 1 if turnaround < features.TIGHT_TURNAROUND_MINUTES else 0
    prev_delay = 0.0 if req.is_first_flight else req.prev_arr_delay

    return {
        "Year": float(req.when.year),
        "Quarter": float((req.when.month - 1) // 3 + 1),
        "Month": float(req.when.month),
        "DayofMonth": float(req.when.day),
        "DayOfWeek": float(req.when.isoweekday()),
        "Airline": float(ctx.encoding.encode("Airline", req.airline)),
        "Origin": float(ctx.encoding.encode("Origin", req.origin)),
        "Dest": float(ctx.encoding.encode("Dest", req.dest)),
        "AirTime": req.air_time,
        "Distance": req.distance,
        "is_holiday": float(
            features.is_holiday(holiday_version, req.when.month, req.when.day)
        ),
        "prev_arr_delay": prev_delay,
        "prev_was_delayed": 1.0 if prev_delay > features.PREV_DELAY_THRESHOLD_MINUTES else 0.0,
        "turnaround": float(turnaround),
        "tight_turnaround": float(tight),
        "is_first_flight": 1.0 if req.is_first_flight else 0.0,
        # Only the inbound leg's delay is knowable at request time; it
        # stands in for the day's accumulated delay.
        "tail_daily_delay": prev_delay,
        "dep_hour": float(dep_hour),
        "is_peak_hour": float(is_peak),
        "is_early_morning": float(is_early),
        "route_delay_rate": ctx.rate_table.route(req.origin, req.dest),
        "airline_delay_rate": ctx.rate_table.airline(req.airline),
        "origin_wind": weather_values["wind"],
        "origin_precip": weather_values["precip"],
        "origin_snow": weather_values["snow"],
        "origin_tmax": weather_values["tmax"],
        "origin_tmin": weather_values["tmin"],
    }


def predict_payload(ctx: ServiceContext, body: Mapping) -> dict:
    """Handle one prediction request end to end; pure given ctx + snapshot."""
    req = parse_predict_request(body, ctx.year)
    snapshot = ctx.store.snapshot()
    weather_values, weather_used = _resolve_weather(ctx, snapshot, req)

    estimate = scoring.compound_risk(
        scoring.detect_conditions(
            scoring.FlightContext(
                origin=req.origin,
                crs_dep_time=req.crs_dep_time,
                day_of_week=req.when.isoweekday(),
                prev_arr_delay=0.0 if req.is_first_flight else req.prev_arr_delay,
            ),
            scoring.WeatherContext(
                wind=weather_values["wind"],
                precip=weather_values["precip"],
                snow=weather_values["snow"],
                tmax=weather_values["tmax"],
                tmin=weather_values["tmin"],
            ),
        ),
        ctx.risk,
    )

    model_probability: float | None = None
    if ctx.model is not None:
        candidates = _model_features(ctx, req, weather_values)
        try:
            vector = trainer.vector_from_mapping(ctx.model, candidates)
        except scoring.ShapeError as exc:
            raise ApiError(500, "configuration_error", str(exc)) from exc
        model_probability = trainer.predict_proba(ctx.model, vector)

    primary = model_probability if model_probability is not None else estimate.probability
    return {
        "model_probability": model_probability,
        "rule_probability": estimate.probability,
        "tier": scoring.tier(primary, ctx.risk.tier_thresholds),
        "base_rate": estimate.base_rate,
        "capped": estimate.capped,
        "applied_multipliers": [
            {"condition": name, "multiplier": value} for name, value in estimate.applied
        ],
        "weather_used": weather_used,
    }


# -- weather/metrics payloads -------------------------------------------------


def _observation_json(airport: str, station: str, obs: weather.WeatherObservation | None) -> dict:
    doc: dict[str, Any] = {"airport": airport, "station": station}
    if obs is None:
        doc["date"] = None
        for variable in weather.VARIABLE_FIELDS:
            doc[variable] = None
    else:
        doc["date"] = obs.date.isoformat()
        for variable in weather.VARIABLE_FIELDS:
            doc[variable] = getattr(obs, variable)
    return doc


def _station_for(ctx: ServiceContext, airport: str) -> str:
    station = ctx.station_map.get(airport.upper())
    if station is None:
        supported = ", ".join(sorted(ctx.station_map))
        raise ApiError(
            404, "not_found",
            f"airport {airport.upper()} is not monitored; supported: {supported}",
            field="airport",
        )
    return station


def weather_latest_payload(ctx: ServiceContext, airport: str) -> dict:
    airport = airport.upper()
    station = _station_for(ctx, airport)
    rows = ctx.store.snapshot().by_station.get(station, [])
    if not rows:
        raise ApiError(404, "not_found", f"no observations loaded for {airport} ({station})")
    return _observation_json(airport, station, rows[-1])


def weather_all_payload(ctx: ServiceContext) -> dict:
    snapshot = ctx.store.snapshot()
    airports = []
    for airport in sorted(ctx.station_map):
        station = ctx.station_map[airport]
        rows = snapshot.by_station.get(station, [])
        airports.append(_observation_json(airport, station, rows[-1] if rows else None))
    return {"airports": airports}


def weather_recent_payload(ctx: ServiceContext, airport: str, days: int) -> dict:
    if days < 1:
        raise _validation_error("days must be a positive integer", "days")
    airport = airport.upper()
    station = _station_for(ctx, airport)
    rows = ctx.store.snapshot().by_station.get(station, [])
    recent = rows[-days:]
    return {
        "airport": airport,
        "station": station,
        "observations": [_observation_json(airport, station, o) for o in recent],
    }


def metrics_payload(ctx: ServiceContext) -> list[dict]:
    if ctx.report_path is None or not Path(ctx.report_path).exists():
        raise ApiError(404, "not_found", "no evaluation report available")
    return json.loads(Path(ctx.report_path).read_text())


# -- app ---------------------------------------------------------------------


def create_app(ctx: ServiceContext):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="flightsense", version="0.1.0")
    app.state.ctx = ctx

    @app.exception_handler(ApiError)
    async def handle_api_error(_request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status_code, content=exc.payload())

    @app.post("/predict")
    async def predict(request: Request):
        try:
            body = await request.json()
        except Exception as exc:
            raise ApiError(400, "validation_error", "request body is not valid JSON") from exc
        return predict_payload(ctx, body)

    @app.get("/weather")
    async def weather_all():
        return weather_all_payload(ctx)

    @app.get("/weather/{airport}/recent")
    async def weather_recent(airport: str, days: int = DEFAULT_RECENT_DAYS):
        return weather_recent_payload(ctx, airport, days)

    @app.get("/weather/{airport}")
    async def weather_latest(airport: str):
        return weather_latest_payload(ctx, airport)

    @app.get("/metrics")
    async def metrics():
        return metrics_payload(ctx)

    return app


def serve(ctx: ServiceContext, host: str = "127.0.0.1", port: int | None = None) -> None:
    import uvicorn

    if port is None:
        port = int(os.environ.get(ENV_PORT, "8080"))
    uvicorn.run(create_app(ctx), host=host, port=port, log_level="info")
