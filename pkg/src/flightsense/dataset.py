"""Encoding, deterministic splitting, and training-ready exports.

Categorical columns are mapped to integer codes assigned in lexicographic
category order, so the mapping is independent of row order; unknown
categories at apply time take the reserved code -1. The 80/10/10 split
uses an in-repo xorshift64* Fisher-Yates shuffle (constants documented in
the README) so identical seeds give identical partitions on every
platform. Partitions export as headerless CSV with the target first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import CATEGORICAL_COLUMNS, FeatureTable

UNKNOWN_CODE = -1

# Mapping-file keys use the raw input schema names.
_MAPPING_FILE_KEYS = {"Airline": "Reporting_Airline", "Origin": "Origin", "Dest": "Dest"}


class ExportError(ValueError):
    """A partition cannot be rendered (non-finite cell)."""


@dataclass(slots=True)
class EncodingMap:
    """Category->code maps for the three categorical columns."""

    codes: dict[str, dict[str, int]]

    def encode(self, column: str, value: str) -> int:
        return self.codes[column].get(value, UNKNOWN_CODE)

    def decode(self, column: str, code: int) -> str:
        table = self.codes[column]
        for value, assigned in table.items():
            if assigned == code:
                return value
        raise KeyError(f"code {code} not present in column {column}")

    def to_json(self) -> dict:
        return {
            _MAPPING_FILE_KEYS.get(col, col): dict(sorted(table.items(), key=lambda kv: kv[1]))
            for col, table in self.codes.items()
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "EncodingMap":
        inverse = {v: k for k, v in _MAPPING_FILE_KEYS.items()}
        codes = {
            inverse.get(name, name): {str(k): int(v) for k, v in table.items()}
            for name, table in doc.items()
        }
        return cls(codes=codes)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "EncodingMap":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_encoding(records: Sequence) -> EncodingMap:
    """Build category codes from records, lexicographic within each column."""
    pools = {"Airline": set(), "Origin": set(), "Dest": set()}
    for r in records:
        pools["Airline"].add(r.airline)
        pools["Origin"].add(r.origin)
        pools["Dest"].add(r.dest)
    return EncodingMap(
        codes={col: {v: i for i, v in enumerate(sorted(pool))} for col, pool in pools.items()}
    )


def apply_encoding(records: Sequence, emap: EncodingMap) -> list[tuple[int, int, int]]:
    """Codes for (airline, origin, dest) per record; unknowns become -1."""
    return [
        (
            emap.encode("Airline", r.airline),
            emap.encode("Origin", r.origin),
            emap.encode("Dest", r.dest),
        )
        for r in records
    ]


@dataclass(slots=True)
class FeatureMatrix:
    """Numeric matrix with target, manifest, and the encoding that built it."""

    version: int
    columns: list[str]
    X: np.ndarray
    y: np.ndarray
    encoding: EncodingMap | None = None

    def __len__(self) -> int:
        return len(self.y)


def encode_table(table: FeatureTable, emap: EncodingMap) -> FeatureMatrix:
    """Apply category codes to a feature table, yielding the numeric matrix."""
    n = len(table)
    X = np.empty((n, len(table.columns)), dtype=np.float64)
    for j, name in enumerate(table.columns):
        if name in CATEGORICAL_COLUMNS:
            codes = table.categorical[name]
            column_map = emap.codes[name]
            X[:, j] = [column_map.get(v, UNKNOWN_CODE) for v in codes]
        else:
            X[:, j] = table.numeric[name]
    return FeatureMatrix(
        version=table.version, columns=list(table.columns), X=X, y=table.target.copy(),
        encoding=emap,
    )


# -- seeded shuffle ---------------------------------------------------------

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_XORSHIFT_MULT = 0x2545F4914F6CDD1D


def _splitmix64(x: int) -> int:
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Xorshift64Star:
    """xorshift64* PRNG (shifts 12/25/27, multiplier 0x2545F4914F6CDD1D).

    The seed passes through one splitmix64 round so any integer seed,
    including zero, yields a valid nonzero state.
    """

    def __init__(self, seed: int):
        self.state = _splitmix64(seed & _MASK64) or _SPLITMIX_GAMMA

    def next_u64(self) -> int:
        s = self.state
        s ^= (s >> 12)
        s ^= (s << 25) & _MASK64
        s ^= (s >> 27)
        self.state = s
        return (s * _XORSHIFT_MULT) & _MASK64

    def below(self, bound: int) -> int:
        return self.next_u64() % bound


def shuffled_indices(n: int, seed: int) -> np.ndarray:
    """Fisher-Yates permutation of range(n) driven by xorshift64*."""
    indices = list(range(n))
    rng = Xorshift64Star(seed)
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        indices[i], indices[j] = indices[j], indices[i]
    return np.asarray(indices, dtype=np.int64)


@dataclass(slots=True)
class SplitSpec:
    """Seeded 80/10/10 split; train/val take floors, test the remainder."""

    seed: int
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    sizes: tuple[int, int, int] = field(default=(0, 0, 0))

    def resolve(self, n: int) -> tuple[int, int, int]:
        # Exact rational floors; float ratios like 0.8 must not round down a
        # mathematically integral product.
        train = int(n * Fraction(str(self.ratios[0])))
        val = int(n * Fraction(str(self.ratios[1])))
        self.sizes = (train, val, n - train - val)
        return self.sizes


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n < 10:
        raise ValueError(f"need at least 10 rows to split 80/10/10, got {n}")
    spec = SplitSpec(seed=seed)
    train_n, val_n, _ = spec.resolve(n)
    perm = shuffled_indices(n, seed)
    return perm[:train_n], perm[train_n : train_n + val_n], perm[train_n + val_n :]


def shuffle_split(
    matrix: FeatureMatrix, spec: SplitSpec
) -> tuple[FeatureMatrix, FeatureMatrix, FeatureMatrix]:
    """Partition a matrix into disjoint, exhaustive train/val/test."""
    parts = split_indices(len(matrix), spec.seed)
    spec.resolve(len(matrix))
    return tuple(
        FeatureMatrix(
            version=matrix.version,
            columns=list(matrix.columns),
            X=matrix.X[idx],
            y=matrix.y[idx],
            encoding=matrix.encoding,
        )
        for idx in parts
    )


def scale_pos_weight(targets: np.ndarray | Sequence[int]) -> float:
    """Negative/positive count ratio for class weighting."""
    y = np.asarray(targets)
    positives = int((y == 1).sum())
    negatives = int((y == 0).sum())
    if positives == 0:
        raise ValueError("no positive targets; class weight undefined")
    return negatives / positives


# -- partition files --------------------------------------------------------


def _render(value: float) -> str:
    value = float(value)  # numpy scalars repr as np.float64(...)
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def export_partition(matrix: FeatureMatrix, path: str | Path) -> None:
    """Write a headerless CSV partition, target first, manifest order.

    Floats render via `repr` so a re-import reproduces them exactly;
    any non-finite cell aborts with its row and column.
    """
    bad = ~np.isfinite(matrix.X)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ExportError(
            f"non-finite value at row {int(row)}, column {matrix.columns[int(col)]}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        for i in range(len(matrix)):
            cells = [str(int(matrix.y[i]))]
            cells.extend(_render(v) for v in matrix.X[i])
            out.write(",".join(cells))
            out.write("\n")


def import_partition(path: str | Path, columns: Sequence[str]) -> FeatureMatrix:
    """Read a headerless target-first partition back into a matrix."""
    rows: list[list[float]] = []
    targets: list[int] = []
    width = len(columns) + 1
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != width:
                raise ExportError(f"line {line_no}: expected {width} cells, got {len(cells)}")
            targets.append(int(float(cells[0])))
            rows.append([float(c) for c in cells[1:]])
    X = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, len(columns)))
    return FeatureMatrix(
        version=0, columns=list(columns), X=X, y=np.asarray(targets, dtype=np.int8)
    )


# -- intermediate matrix file (header row, NaN as empty cell) ---------------


def save_matrix(matrix: FeatureMatrix, path: str | Path) -> None:
    """Persist an intermediate matrix with a header row; NaN renders empty."""
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        out.write(",".join(["ArrDel15"] + list(matrix.columns)))
        out.write("\n")
        for i in range(len(matrix)):
            cells = [str(int(matrix.y[i]))]
            for v in matrix.X[i]:
                cells.append("" if np.isnan(v) else _render(v))
            out.write(",".join(cells))
            out.write("\n")


def load_matrix(path: str | Path) -> FeatureMatrix:
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().strip()
        if not header:
            raise ExportError("matrix file is empty")
        names = header.split(",")
        if names[0] != "ArrDel15":
            raise ExportError("matrix file must carry the target column first")
        columns = names[1:]
        targets: list[int] = []
        rows: list[list[float]] = []
        for line_no, line in enumerate(handle, 2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(names):
                raise ExportError(f"line {line_no}: expected {len(names)} cells")
            targets.append(int(float(cells[0])))
            rows.append([float(c) if c else float("nan") for c in cells[1:]])
    X = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, len(columns)))
    return FeatureMatrix(version=0, columns=columns, X=X, y=np.asarray(targets, dtype=np.int8))
