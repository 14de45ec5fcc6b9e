"""Command-line pipeline driver.

Subcommands map one-to-one onto the pipeline stages: synth, ingest,
weather-join, features, split, train, evaluate, ablate, serve, and a
one-shot predict. Every stage reads and writes plain files so any stage
can be rerun in isolation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluation, features, ingest, scoring, service, synthgen, trainer, weather

log = logging.getLogger(__name__)


def _parse_months(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(",") if part]


def _cmd_synth(args) -> int:
    config = synthgen.SynthConfig(
        n_aircraft=args.aircraft,
        days=args.days,
        legs_per_day=(args.legs_min, args.legs_max),
        base_delay_rate=args.base_rate,
        propagation_strength=args.propagation,
        weather_effect=args.weather_effect,
        airline_effect=args.airline_effect,
        seed=args.seed,
    )
    records, observations = synthgen.generate(config)
    out = Path(args.out)
    paths = synthgen.write_flight_csvs(records, out)
    weather_path = synthgen.write_weather_csv(observations, out / "weather.csv")
    delayed = sum(r.arr_del15 or 0 for r in records)
    print(
        f"wrote {len(records)} legs across {len(paths)} monthly file(s) "
        f"(delay rate {delayed / len(records):.4f}) and {weather_path}"
    )
    return 0


def _cmd_ingest(args) -> int:
    months = _parse_months(args.months) if args.months else None
    summaries = ingest.ingest_directory(args.in_dir, args.out_dir, months)
    for s in summaries:
        print(
            f"month {s.month:02d}: kept {s.stats.kept}/{s.stats.input_count} "
            f"(target {s.stats.missing_target}, tail {s.stats.missing_tail}, "
            f"dep-time {s.stats.missing_dep_time}, cancelled {s.stats.cancelled}) -> {s.path}"
        )
    return 0


def _cmd_weather_join(args) -> int:
    observations = weather.load_observations(args.weather)
    station_map = weather.load_station_map(args.stations)
    index = weather.index_observations(observations)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in ingest.checkpoint_paths(args.flights):
        records, _, meta = ingest.read_checkpoint_full(path)
        joined = weather.join_weather(records, index, station_map, medians=None)
        extras = {
            name: [None if np.isnan(v) else float(v) for v in column]
            for name, column in joined.items()
        }
        ingest.write_checkpoint(records, meta.month, out_dir / path.name, extra=extras)
        covered = int((~np.isnan(joined["origin_wind"])).sum())
        print(f"{path.name}: joined weather for {covered}/{len(records)} rows")
    return 0


def _cmd_features(args) -> int:
    records, extras = ingest.read_checkpoint_dir(args.in_dir)
    if not records:
        print("error: no records in checkpoints", file=sys.stderr)
        return 1
    order = features.chain_order(records)
    records = [records[i] for i in order]

    weather_columns = None
    if args.version == 3:
        missing = [name for name in weather.JOINED_COLUMNS if name not in extras]
        if missing:
            print(
                f"error: checkpoints lack weather column(s) {missing}; run weather-join first",
                file=sys.stderr,
            )
            return 1
        weather_columns = {
            name: np.asarray(
                [np.nan if extras[name][i] is None else extras[name][i] for i in order],
                dtype=np.float64,
            )
            for name in weather.JOINED_COLUMNS
        }

    rate_table = None
    if args.version >= 2:
        rates_path = Path(args.rates)
        if rates_path.exists():
            rate_table = features.RateTable.load(rates_path)
        else:
            rate_table = features.build_rate_table(records)
            rate_table.save(rates_path)
            print(f"built rate table -> {rates_path}")

    table = features.assemble_features(
        args.version, records, rate_table=rate_table, weather=weather_columns
    )
    mappings_path = Path(args.mappings)
    if mappings_path.exists():
        encoding = dataset.EncodingMap.load(mappings_path)
    else:
        encoding = dataset.fit_encoding(records)
        encoding.save(mappings_path)
        print(f"fit category mappings -> {mappings_path}")
    matrix = dataset.encode_table(table, encoding)
    matrix.version = args.version
    dataset.save_matrix(matrix, args.out)
    print(f"wrote {len(matrix)} x {len(matrix.columns)} matrix (v{args.version}) -> {args.out}")
    return 0


def _cmd_split(args) -> int:
    matrix = dataset.load_matrix(args.in_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_idx, val_idx, test_idx = dataset.split_indices(len(matrix), args.seed)

    # Weather columns may still have open (NaN) slots from the first join
    # pass; fill every partition from the training partition's medians.
    weather_present = [c for c in weather.JOINED_COLUMNS if c in matrix.columns]
    if weather_present:
        positions = {name: matrix.columns.index(name) for name in weather_present}
        medians = weather.compute_medians(
            {name: matrix.X[train_idx, j] for name, j in positions.items()}
        )
        fallback = medians.as_mapping()
        for name, j in positions.items():
            column = matrix.X[:, j]
            column[np.isnan(column)] = fallback[name]
        medians.save(out_dir / "imputation_medians.json")

    names = {"train": train_idx, "val": val_idx, "test": test_idx}
    for name, idx in names.items():
        part = dataset.FeatureMatrix(
            version=matrix.version, columns=matrix.columns, X=matrix.X[idx], y=matrix.y[idx]
        )
        dataset.export_partition(part, out_dir / f"{name}.csv")
    (out_dir / "manifest.json").write_text(json.dumps(matrix.columns, indent=2))
    (out_dir / "split_meta.json").write_text(json.dumps({
        "seed": args.seed,
        "sizes": {name: int(len(idx)) for name, idx in names.items()},
    }, indent=2))
    print(
        f"split {len(matrix)} rows -> train {len(train_idx)}, val {len(val_idx)}, "
        f"test {len(test_idx)} in {out_dir}"
    )
    return 0


def _load_manifest(args) -> list[str]:
    manifest_path = Path(args.manifest) if args.manifest else Path(args.in_path).parent / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"feature manifest not found: {manifest_path}")
    return json.loads(manifest_path.read_text())


def _cmd_train(args) -> int:
    columns = _load_manifest(args)
    train_matrix = dataset.import_partition(args.in_path, columns)
    pos_weight = (
        dataset.scale_pos_weight(train_matrix.y)
        if args.pos_weight == "auto"
        else float(args.pos_weight)
    )
    config = trainer.TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, l2=args.l2, pos_weight=pos_weight
    )
    model = trainer.fit(train_matrix.X, train_matrix.y, columns, config)
    model.save(args.out)
    message = (
        f"trained on {len(train_matrix)} rows (pos_weight {pos_weight:.4f}, "
        f"final loss {model.train_meta['final_loss']:.6f})"
    )
    if args.val:
        val_matrix = dataset.import_partition(args.val, columns)
        val_auc = evaluation.roc_auc(evaluation.batch_score(model, val_matrix.X), val_matrix.y)
        message += f", val AUC {val_auc:.4f}"
    print(message + f" -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    model = trainer.LinearModel.load(args.model)
    test_matrix = dataset.import_partition(args.test, model.columns)
    test_matrix.version = 0
    scores = evaluation.batch_score(model, test_matrix.X)
    tm = evaluation.threshold_metrics(scores, test_matrix.y)
    report = {
        "rows": len(test_matrix),
        "feature_count": len(model.columns),
        "auc": evaluation.roc_auc(scores, test_matrix.y),
        "accuracy": tm.accuracy,
        "recall": tm.recall,
        "precision": tm.precision,
        "f1": tm.f1,
    }
    print(json.dumps(report, indent=2))
    return 0


def _cmd_ablate(args) -> int:
    records, _ = ingest.read_checkpoint_dir(args.flights)
    observations = weather.load_observations(args.weather)
    reports, artifacts = evaluation.ablate(records, observations, seed=args.seed)
    evaluation.save_reports(reports, args.report)
    for report in reports:
        delta = (
            f" (delta {report.delta_auc_vs_prev:+.4f})"
            if report.delta_auc_vs_prev is not None
            else ""
        )
        print(
            f"v{report.version}: {report.feature_count} features, "
            f"AUC {report.auc:.4f}{delta}"
        )
    if args.artifacts:
        out = Path(args.artifacts)
        out.mkdir(parents=True, exist_ok=True)
        artifacts.models[max(artifacts.models)].save(out / "model.json")
        artifacts.encoding.save(out / "category_mappings.json")
        artifacts.rate_table.save(out / "rate_table.json")
        artifacts.medians.save(out / "imputation_medians.json")
        scoring.RiskConfig().save(out / "risk_config.json")
        evaluation.save_reports(reports, out / "report.json")
        print(f"serving artifacts -> {out}")
    print(f"report -> {args.report}")
    return 0


def _context_from_args(args) -> service.ServiceContext:
    return service.load_context(
        artifacts_dir=args.artifacts,
        model_path=args.model,
        mappings_path=args.mappings,
        rates_path=args.rates,
        medians_path=args.medians,
        stations_path=args.stations,
        risk_path=args.risk_config,
        weather_path=args.weather,
        weather_dir=args.weather_dir,
        report_path=args.report,
        year=args.year,
    )


def _cmd_serve(args) -> int:
    ctx = _context_from_args(args)
    service.serve(ctx, host=args.host, port=args.port)
    return 0


def _cmd_predict(args) -> int:
    ctx = _context_from_args(args)
    body: dict = {
        "airline": args.airline,
        "origin": args.origin,
        "dest": args.dest,
        "date": args.date,
        "crs_dep_time": args.dep_time,
        "distance": args.distance,
        "air_time": args.air_time,
    }
    if args.prev_arr_delay is not None:
        body["prev_arr_delay"] = args.prev_arr_delay
    if args.turnaround is not None:
        body["turnaround"] = args.turnaround
    overrides = {
        name: getattr(args, name)
        for name in ("wind", "precip", "snow", "tmax", "tmin")
        if getattr(args, name) is not None
    }
    if overrides:
        body["overrides"] = overrides
    print(json.dumps(service.predict_payload(ctx, body), indent=2))
    return 0


def _add_service_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--artifacts", help="directory of conventional artifact filenames")
    parser.add_argument("--model", help="model JSON path")
    parser.add_argument("--mappings", help="category mappings JSON path")
    parser.add_argument("--rates", help="rate table JSON path")
    parser.add_argument("--medians", help="imputation medians JSON path")
    parser.add_argument("--stations", help="airport-to-station JSON path")
    parser.add_argument("--risk-config", dest="risk_config", help="risk config JSON path")
    parser.add_argument("--weather", help="observation CSV path")
    parser.add_argument("--weather-dir", dest="weather_dir", help="drop directory of observation CSVs")
    parser.add_argument("--report", help="evaluation report JSON path")
    parser.add_argument("--year", type=int, default=service.DEFAULT_YEAR)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flightsense", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--aircraft", type=int, default=100)
    p.add_argument("--days", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--legs-min", type=int, default=2)
    p.add_argument("--legs-max", type=int, default=5)
    p.add_argument("--base-rate", type=float, default=0.1912)
    p.add_argument("--propagation", type=float, default=0.0)
    p.add_argument("--weather-effect", type=float, default=0.0)
    p.add_argument("--airline-effect", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="parse, clean, and checkpoint monthly CSVs")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--months", help="e.g. 1..12 or 1,2,7")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("weather-join", help="attach origin weather to checkpoints")
    p.add_argument("--flights", required=True, help="checkpoint directory")
    p.add_argument("--weather", required=True, help="observation CSV")
    p.add_argument("--stations", help="airport-to-station JSON (defaults to built-in)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_weather_join)

    p = sub.add_parser("features", help="assemble a versioned feature matrix")
    p.add_argument("--version", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--in", dest="in_dir", required=True, help="checkpoint directory")
    p.add_argument("--out", required=True, help="matrix CSV path")
    p.add_argument("--rates", default="rate_table.json")
    p.add_argument("--mappings", default="category_mappings.json")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("split", help="seeded 80/10/10 partition export")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--in", dest="in_path", required=True, help="matrix CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="fit the logistic classifier")
    p.add_argument("--in", dest="in_path", required=True, help="train.csv")
    p.add_argument("--val", help="val.csv for a validation AUC readout")
    p.add_argument("--manifest", help="manifest.json (defaults next to train.csv)")
    p.add_argument("--pos-weight", dest="pos_weight", default="auto")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a test partition")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("ablate", help="three-version ablation harness")
    p.add_argument("--flights", required=True, help="checkpoint directory")
    p.add_argument("--weather", required=True, help="observation CSV")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--artifacts", help="also write serving artifacts here")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    _add_service_arguments(p)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("predict", help="one-shot local prediction")
    p.add_argument("--airline", required=True)
    p.add_argument("--origin", required=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--date", required=True, help="YYYY-MM-DD")
    p.add_argument("--dep-time", dest="dep_time", type=int, required=True, help="HHMM")
    p.add_argument("--distance", type=float, required=True)
    p.add_argument("--air-time", dest="air_time", type=float, required=True)
    p.add_argument("--prev-arr-delay", dest="prev_arr_delay", type=float)
    p.add_argument("--turnaround", type=int)
    for name in ("wind", "precip", "snow", "tmax", "tmin"):
        p.add_argument(f"--{name}", type=float, help=f"override origin {name}")
    _add_service_arguments(p)
    p.set_defaults(func=_cmd_predict)

    return parser


def cli_dispatch(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (
        ValueError,
        FileNotFoundError,
        service.ApiError,
        ingest.SchemaError,
    ) as exc:
        message = exc.message if isinstance(exc, service.ApiError) else str(exc)
        print(f"error: {message}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return cli_dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
