"""Streaming ingestion of monthly on-time-performance CSVs.

Parses the 17-column retained schema out of arbitrarily wide BTS-style
files, applies the cleaning filters required for rotation-chain work, and
persists each month as a compact columnar checkpoint (magic ``FSCK``) so
downstream stages can resume without reparsing raw CSV. Peak memory is
bounded by one month, never the full year.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"FSCK"
FORMAT_VERSION = 1

# Retained input columns; every name must appear in the CSV header.
RETAINED_COLUMNS: tuple[str, ...] = (
    "Year",
    "Quarter",
    "Month",
    "DayofMonth",
    "DayOfWeek",
    "Reporting_Airline",
    "Tail_Number",
    "Origin",
    "Dest",
    "CRSDepTime",
    "DepTime",
    "DepDelay",
    "CRSArrTime",
    "AirTime",
    "ArrDelay",
    "ArrDel15",
    "Distance",
)
# Present in some files only; honored when available, never required.
OPTIONAL_COLUMNS: tuple[str, ...] = ("Cancelled",)


class SchemaError(ValueError):
    """A required header column is missing from the input CSV."""


class CsvParseError(ValueError):
    """Structurally malformed CSV (e.g. unbalanced quotes)."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class CheckpointFormatError(ValueError):
    """Checkpoint file has the wrong magic tag or format version."""


class CheckpointCorruptionError(ValueError):
    """Checkpoint payload is truncated or inconsistent."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(slots=True)
class FlightRecord:
    """One on-time-performance row after column retention and typing.

    Numeric fields are held at narrow-width precision (delays and air time
    as float32-representable values, clock fields as small ints) so that
    checkpoint round-trips are bit-exact.
    """

    year: int | None
    quarter: int | None
    month: int | None
    day_of_month: int | None
    day_of_week: int | None
    airline: str
    tail_number: str | None
    origin: str
    dest: str
    crs_dep_time: int | None
    dep_time: int | None
    dep_delay: float | None
    crs_arr_time: int | None
    air_time: float | None
    arr_delay: float | None
    arr_del15: int | None
    distance: float | None
    cancelled: int | None = None


def _parse_int(cell: str) -> int | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        return int(float(cell))
    except ValueError:
        return None


def _parse_f32(cell: str) -> float | None:
    """Parse a float cell, immediately downcast to float32 precision."""
    cell = cell.strip()
    if not cell:
        return None
    try:
        return float(np.float32(cell))
    except ValueError:
        return None


def _parse_hhmm(cell: str) -> int | None:
    """Parse an HHMM clock cell; 2400 normalizes to 2359 to keep same-day order."""
    value = _parse_int(cell)
    if value is None:
        return None
    if value == 2400:
        return 2359
    if 0 <= value <= 2359:
        return value
    return None


def _parse_binary(cell: str) -> int | None:
    value = _parse_f32(cell)
    if value == 0.0:
        return 0
    if value == 1.0:
        return 1
    return None


def _parse_str(cell: str) -> str | None:
    cell = cell.strip()
    return cell or None


# (csv header, record field, cell parser)
_COLUMN_PARSERS = (
    ("Year", "year", _parse_int),
    ("Quarter", "quarter", _parse_int),
    ("Month", "month", _parse_int),
    ("DayofMonth", "day_of_month", _parse_int),
    ("DayOfWeek", "day_of_week", _parse_int),
    ("Reporting_Airline", "airline", _parse_str),
    ("Tail_Number", "tail_number", _parse_str),
    ("Origin", "origin", _parse_str),
    ("Dest", "dest", _parse_str),
    ("CRSDepTime", "crs_dep_time", _parse_hhmm),
    ("DepTime", "dep_time", _parse_hhmm),
    ("DepDelay", "dep_delay", _parse_f32),
    ("CRSArrTime", "crs_arr_time", _parse_hhmm),
    ("AirTime", "air_time", _parse_f32),
    ("ArrDelay", "arr_delay", _parse_f32),
    ("ArrDel15", "arr_del15", _parse_binary),
    ("Distance", "distance", _parse_f32),
    ("Cancelled", "cancelled", _parse_binary),
)


def parse_month(
    source: IO[str] | str | Path,
    columns: Sequence[str] = RETAINED_COLUMNS,
) -> list[FlightRecord]:
    """Parse one monthly CSV, retaining only the configured columns.

    Extra columns are skipped silently; any missing retained column is a
    `SchemaError`. Unparseable numeric cells become None rather than
    failing the row. The reader streams, so memory tracks one file.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as handle:
            return parse_month(handle, columns)

    reader = csv.reader(source, strict=True)
    try:
        header = next(reader, None)
        if header is None:
            raise SchemaError("empty input: header row is required")
        header = [name.strip() for name in header]
        positions = {name: i for i, name in enumerate(header)}
        missing = [name for name in columns if name not in positions]
        if missing:
            raise SchemaError(f"missing required column(s): {', '.join(missing)}")

        wanted = []
        for csv_name, field_name, parser in _COLUMN_PARSERS:
            if csv_name in positions and (csv_name in columns or csv_name in OPTIONAL_COLUMNS):
                wanted.append((positions[csv_name], field_name, parser))

        records: list[FlightRecord] = []
        blank = {f.name: None for f in fields(FlightRecord)}
        for row in reader:
            values = dict(blank)
            width = len(row)
            for pos, field_name, parser in wanted:
                values[field_name] = parser(row[pos]) if pos < width else None
            values["airline"] = values["airline"] or ""
            values["origin"] = values["origin"] or ""
            values["dest"] = values["dest"] or ""
            records.append(FlightRecord(**values))
        return records
    except csv.Error as exc:
        raise CsvParseError(str(exc), line=reader.line_num) from exc


@dataclass(slots=True)
class CleanStats:
    """Per-filter drop tallies for one cleaning pass."""

    input_count: int = 0
    missing_target: int = 0
    missing_tail: int = 0
    missing_dep_time: int = 0
    cancelled: int = 0
    kept: int = 0

    @property
    def dropped(self) -> int:
        return self.missing_target + self.missing_tail + self.missing_dep_time + self.cancelled


def clean_detailed(records: Iterable[FlightRecord]) -> tuple[list[FlightRecord], CleanStats]:
    """Apply the cleaning filters in fixed order, tallying each drop.

    Order: missing target, missing tail number, missing departure time,
    cancelled flight. Survivors keep their relative order.
    """
    stats = CleanStats()
    kept: list[FlightRecord] = []
    for record in records:
        stats.input_count += 1
        if record.arr_del15 is None:
            stats.missing_target += 1
        elif not record.tail_number:
            stats.missing_tail += 1
        elif record.crs_dep_time is None:
            stats.missing_dep_time += 1
        elif record.cancelled == 1:
            stats.cancelled += 1
        else:
            kept.append(record)
    stats.kept = len(kept)
    return kept, stats


def clean(records: Iterable[FlightRecord]) -> list[FlightRecord]:
    """Filtering pass; see `clean_detailed` for the audit tallies."""
    return clean_detailed(records)[0]


# ---------------------------------------------------------------------------
# Columnar checkpoints
#
# Layout (little-endian throughout):
#   magic "FSCK" | u16 format_version | u8 month | u32 record_count |
#   u16 column_count | directory | payloads
# Directory entry: u16 name_len | name utf-8 | u8 type_code | u8 nullable |
#   u64 payload_bytes
# Numeric payload: [validity bitmap ceil(n/8) if nullable] + n raw values.
# String payload:  [bitmap if nullable] + u32 blob_len + (n+1) u32 offsets +
#   utf-8 blob. Null slots store zero / empty and are masked by the bitmap.
# ---------------------------------------------------------------------------

_TYPE_CODES = {
    "u8": 1,
    "i8": 2,
    "u16": 3,
    "i16": 4,
    "u32": 5,
    "i32": 6,
    "f32": 7,
    "f64": 8,
    "str": 9,
}
_NUMPY_DTYPES = {
    1: "<u1",
    2: "<i1",
    3: "<u2",
    4: "<i2",
    5: "<u4",
    6: "<i4",
    7: "<f4",
    8: "<f8",
}

# Storage plan for flight columns: (csv name, field, type, nullable).
_CHECKPOINT_COLUMNS = (
    ("Year", "year", "u16", True),
    ("Quarter", "quarter", "u8", True),
    ("Month", "month", "u8", True),
    ("DayofMonth", "day_of_month", "u8", True),
    ("DayOfWeek", "day_of_week", "u8", True),
    ("Reporting_Airline", "airline", "str", False),
    ("Tail_Number", "tail_number", "str", True),
    ("Origin", "origin", "str", False),
    ("Dest", "dest", "str", False),
    ("CRSDepTime", "crs_dep_time", "u16", True),
    ("DepTime", "dep_time", "u16", True),
    ("DepDelay", "dep_delay", "f32", True),
    ("CRSArrTime", "crs_arr_time", "u16", True),
    ("AirTime", "air_time", "f32", True),
    ("ArrDelay", "arr_delay", "f32", True),
    ("ArrDel15", "arr_del15", "i8", True),
    ("Distance", "distance", "f32", True),
    ("Cancelled", "cancelled", "i8", True),
)
_FIELD_BY_NAME = {name: fld for name, fld, _, _ in _CHECKPOINT_COLUMNS}

# Extra columns (e.g. joined weather) are stored as nullable f64 so the
# join survives a checkpoint round-trip bit-exactly.
EXTRA_COLUMN_TYPE = "f64"


@dataclass(slots=True)
class MonthlyCheckpoint:
    """Metadata for one persisted month."""

    month: int
    record_count: int
    columns: list[tuple[str, str]]  # (name, storage type)
    format_version: int = FORMAT_VERSION
    path: Path | None = None


def _pack_bitmap(valid: np.ndarray) -> bytes:
    return np.packbits(valid.astype(np.uint8), bitorder="little").tobytes()


def _unpack_bitmap(buf: bytes, n: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    return bits[:n].astype(bool)


def _encode_numeric(values: list, code: int, nullable: bool) -> bytes:
    n = len(values)
    valid = np.array([v is not None for v in values], dtype=bool)
    filled = np.array([0 if v is None else v for v in values])
    data = filled.astype(_NUMPY_DTYPES[code]).tobytes()
    if nullable:
        return _pack_bitmap(valid) + data
    if not valid.all():
        raise ValueError("null value in non-nullable column")
    return data


def _encode_str(values: list, nullable: bool) -> bytes:
    encoded = [(v or "").encode("utf-8") for v in values]
    blob = b"".join(encoded)
    offsets = np.zeros(len(values) + 1, dtype="<u4")
    np.cumsum([len(e) for e in encoded], out=offsets[1:])
    payload = struct.pack("<I", len(blob)) + offsets.tobytes() + blob
    if nullable:
        valid = np.array([v is not None for v in values], dtype=bool)
        return _pack_bitmap(valid) + payload
    return payload


def write_checkpoint(
    records: Sequence[FlightRecord],
    month: int,
    path: str | Path,
    extra: dict[str, Sequence[float | None]] | None = None,
) -> MonthlyCheckpoint:
    """Persist one month of records (plus optional float extras) columnar.

    Nullable columns carry one validity bitmap each, so round-trips are
    exact even for null-bearing columns.
    """
    path = Path(path)
    n = len(records)
    names: list[tuple[str, str]] = []
    payloads: list[tuple[str, int, bool, bytes]] = []

    for name, field_name, type_name, nullable in _CHECKPOINT_COLUMNS:
        code = _TYPE_CODES[type_name]
        values = [getattr(r, field_name) for r in records]
        if type_name == "str":
            payload = _encode_str(values, nullable)
        else:
            payload = _encode_numeric(values, code, nullable)
        payloads.append((name, code, nullable, payload))
        names.append((name, type_name))

    for name, values in (extra or {}).items():
        if name in _FIELD_BY_NAME:
            raise ValueError(f"extra column shadows flight column: {name}")
        if len(values) != n:
            raise ValueError(f"extra column {name} has {len(values)} values for {n} records")
        code = _TYPE_CODES[EXTRA_COLUMN_TYPE]
        payload = _encode_numeric(list(values), code, nullable=True)
        payloads.append((name, code, True, payload))
        names.append((name, EXTRA_COLUMN_TYPE))

    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<HBIH", FORMAT_VERSION, month, n, len(payloads)))
        for name, code, nullable, payload in payloads:
            raw = name.encode("utf-8")
            out.write(struct.pack("<H", len(raw)))
            out.write(raw)
            out.write(struct.pack("<BBQ", code, 1 if nullable else 0, len(payload)))
        for _, _, _, payload in payloads:
            out.write(payload)

    return MonthlyCheckpoint(month=month, record_count=n, columns=names, path=path)


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, nbytes: int) -> bytes:
        end = self.pos + nbytes
        if end > len(self.buf):
            raise CheckpointCorruptionError(
                f"expected {nbytes} more bytes, found {len(self.buf) - self.pos}",
                offset=self.pos,
            )
        chunk = self.buf[self.pos : end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_numeric(cur: _Cursor, n: int, code: int, nullable: bool) -> list:
    valid = _unpack_bitmap(cur.take((n + 7) // 8), n) if nullable else None
    dtype = np.dtype(_NUMPY_DTYPES[code])
    data = np.frombuffer(cur.take(n * dtype.itemsize), dtype=dtype)
    is_float = code in (7, 8)
    out = []
    for i in range(n):
        if valid is not None and not valid[i]:
            out.append(None)
        else:
            out.append(float(data[i]) if is_float else int(data[i]))
    return out


def _decode_str(cur: _Cursor, n: int, nullable: bool) -> list:
    valid = _unpack_bitmap(cur.take((n + 7) // 8), n) if nullable else None
    (blob_len,) = cur.unpack("<I")
    offsets = np.frombuffer(cur.take((n + 1) * 4), dtype="<u4")
    if n and int(offsets[-1]) != blob_len:
        raise CheckpointCorruptionError("string offsets disagree with blob length", offset=cur.pos)
    blob = cur.take(blob_len)
    out = []
    for i in range(n):
        if valid is not None and not valid[i]:
            out.append(None)
        else:
            out.append(blob[offsets[i] : offsets[i + 1]].decode("utf-8"))
    return out


def read_checkpoint_full(
    path: str | Path,
) -> tuple[list[FlightRecord], dict[str, list[float | None]], MonthlyCheckpoint]:
    """Read a checkpoint back into records, extra columns, and metadata."""
    raw = Path(path).read_bytes()
    cur = _Cursor(raw)
    magic = cur.take(4)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic tag {magic!r}, expected {MAGIC!r}")
    version, month, n, column_count = cur.unpack("<HBIH")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}")

    directory: list[tuple[str, int, bool, int]] = []
    for _ in range(column_count):
        (name_len,) = cur.unpack("<H")
        name = cur.take(name_len).decode("utf-8")
        code, nullable, payload_len = cur.unpack("<BBQ")
        directory.append((name, code, bool(nullable), payload_len))

    type_names = {v: k for k, v in _TYPE_CODES.items()}
    columns: dict[str, list] = {}
    meta_columns: list[tuple[str, str]] = []
    for name, code, nullable, payload_len in directory:
        start = cur.pos
        if code == _TYPE_CODES["str"]:
            columns[name] = _decode_str(cur, n, nullable)
        elif code in _NUMPY_DTYPES:
            columns[name] = _decode_numeric(cur, n, code, nullable)
        else:
            raise CheckpointFormatError(f"unknown column type code {code} for {name}")
        if cur.pos - start != payload_len:
            raise CheckpointCorruptionError(
                f"column {name} payload length mismatch", offset=cur.pos
            )
        meta_columns.append((name, type_names[code]))

    records: list[FlightRecord] = []
    flight_names = [name for name, *_ in _CHECKPOINT_COLUMNS if name in columns]
    missing = [name for name, *_ in _CHECKPOINT_COLUMNS if name not in columns]
    if missing:
        raise CheckpointFormatError(f"checkpoint missing flight column(s): {', '.join(missing)}")
    for i in range(n):
        values = {_FIELD_BY_NAME[name]: columns[name][i] for name in flight_names}
        values["airline"] = values["airline"] or ""
        values["origin"] = values["origin"] or ""
        values["dest"] = values["dest"] or ""
        records.append(FlightRecord(**values))

    extra = {name: columns[name] for name, *_ in directory if name not in _FIELD_BY_NAME}
    meta = MonthlyCheckpoint(
        month=month, record_count=n, columns=meta_columns, format_version=version, path=Path(path)
    )
    return records, extra, meta


def read_checkpoint(path: str | Path) -> list[FlightRecord]:
    return read_checkpoint_full(path)[0]


def checkpoint_paths(directory: str | Path) -> list[Path]:
    """Checkpoint files of a directory in month order."""
    paths = sorted(Path(directory).glob("month_*.fsck"))
    if not paths:
        raise FileNotFoundError(f"no month_*.fsck checkpoints in {directory}")
    return paths


def read_checkpoint_dir(
    directory: str | Path,
) -> tuple[list[FlightRecord], dict[str, list[float | None]]]:
    """Concatenate all monthly checkpoints of a directory in month order."""
    records: list[FlightRecord] = []
    extras: dict[str, list[float | None]] = {}
    for index, path in enumerate(checkpoint_paths(directory)):
        month_records, month_extra, _ = read_checkpoint_full(path)
        if index == 0:
            extras = {name: list(values) for name, values in month_extra.items()}
        elif set(extras) != set(month_extra):
            raise CheckpointFormatError(f"checkpoint {path.name} has inconsistent extra columns")
        else:
            for name, values in month_extra.items():
                extras[name].extend(values)
        records.extend(month_records)
    return records, extras


@dataclass(slots=True)
class MonthSummary:
    month: int
    stats: CleanStats
    path: Path


def _iter_month_files(in_dir: Path) -> Iterator[Path]:
    files = sorted(p for p in in_dir.iterdir() if p.suffix.lower() == ".csv")
    if not files:
        raise FileNotFoundError(f"no .csv files in {in_dir}")
    yield from files


def ingest_directory(
    in_dir: str | Path,
    out_dir: str | Path,
    months: Sequence[int] | None = None,
) -> list[MonthSummary]:
    """Parse, clean, and checkpoint every monthly CSV in a directory.

    Files are processed one at a time and released before the next is
    read; holding the whole year is never required.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = set(months) if months is not None else None
    summaries: list[MonthSummary] = []
    seen: set[int] = set()

    for path in _iter_month_files(in_dir):
        records = parse_month(path)
        if not records:
            log.warning("skipping %s: no data rows", path.name)
            continue
        month_values = {r.month for r in records}
        if len(month_values) != 1 or None in month_values:
            raise ValueError(f"{path.name}: expected a single month per file, got {month_values}")
        month = records[0].month
        assert month is not None
        if wanted is not None and month not in wanted:
            continue
        if month in seen:
            raise ValueError(f"month {month} appears in more than one input file")
        seen.add(month)

        cleaned, stats = clean_detailed(records)
        del records
        out_path = out_dir / f"month_{month:02d}.fsck"
        write_checkpoint(cleaned, month, out_path)
        log.info(
            "month %02d: kept %d of %d rows (%d dropped)",
            month, stats.kept, stats.input_count, stats.dropped,
        )
        summaries.append(MonthSummary(month=month, stats=stats, path=out_path))
    return summaries
