"""CSV ingestion and export.

Contract: UTF-8, the first row holds the column names, '.' is the decimal
separator and every referenced cell must be a finite number. Missing values
are rejected, never imputed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmTestError, InvalidInputError
from .glm import Dataset, Family

NA_TOKENS = {"", "na", "nan", "null", "none", "?"}


class CsvParseError(EmTestError):
    """The input file violates the CSV contract; the message names row and column."""


@dataclass(frozen=True)
class ColumnSpec:
    response: str
    x: tuple
    z: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(self.x))
        object.__setattr__(self, "z", tuple(self.z))
        if not self.x:
            raise InvalidInputError("at least one x column is required")
        names = [self.response, *self.x, *self.z]
        if len(set(names)) != len(names):
            raise InvalidInputError(f"response, x and z columns must be disjoint: {names}")

    @property
    def names(self) -> list:
        return [*self.x, *self.z]

    def to_dict(self) -> dict:
        return {"response": self.response, "x": list(self.x), "z": list(self.z)}


def _cell(text: str, row: int, col: str) -> float:
    s = text.strip()
    if s.lower() in NA_TOKENS:
        raise CsvParseError(f"row {row}, column {col!r}: missing value")
    try:
        v = float(s)
    except ValueError:
        raise CsvParseError(f"row {row}, column {col!r}: non-numeric cell {text!r}") from None
    if not math.isfinite(v):
        raise CsvParseError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return v


def read_csv_dataset(path, columns: ColumnSpec, family: Family) -> Dataset:
    """Read the referenced columns of a CSV file into a :class:`Dataset`.

    Rows are numbered as in the file (the header is row 1).
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CsvParseError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise CsvParseError(f"{path} is not valid UTF-8: {exc}") from exc
    if not rows:
        raise CsvParseError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise CsvParseError("row 1: duplicate column names in the header")
    missing = [c for c in [columns.response, *columns.names] if c not in header]
    if missing:
        raise CsvParseError(f"row 1: columns not found: {', '.join(missing)} (have {', '.join(header)})")
    wanted = [columns.response, *columns.names]
    index = [header.index(c) for c in wanted]

    values = []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CsvParseError(f"row {r}: expected {len(header)} cells, found {len(row)}")
        values.append([_cell(row[j], r, c) for j, c in zip(index, wanted)])
    if not values:
        raise CsvParseError(f"{path} has no data rows")
    A = np.asarray(values, dtype=float)
    y = A[:, 0]
    if not family.is_normal:
        bad = np.flatnonzero((y != 0) & (y != 1))
        if bad.size:
            raise CsvParseError(
                f"column {columns.response!r}: binary response expected, found {y[bad[0]]:g}"
                f" in data row {int(bad[0]) + 1}"
            )
    p = len(columns.x)
    return Dataset(y, A[:, 1:1 + p], A[:, 1 + p:], family)


def write_csv_dataset(data: Dataset, path, columns: Optional[ColumnSpec] = None) -> ColumnSpec:
    """Write a dataset so that :func:`read_csv_dataset` recovers it exactly."""
    columns = columns or default_columns(data.p, data.q)
    if len(columns.x) != data.p or len(columns.z) != data.q:
        raise InvalidInputError("column names do not match the dataset shape")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([columns.response, *columns.names])
        for i in range(data.n):
            # repr round-trips doubles exactly
            w.writerow([repr(float(v)) for v in (data.y[i], *data.X[i], *data.Z[i])])
    return columns


def default_columns(p: int, q: int) -> ColumnSpec:
    return ColumnSpec("y", tuple(f"x{j + 1}" for j in range(p)), tuple(f"z{j + 1}" for j in range(q)))


def parse_names(text: Optional[str]) -> Sequence[str]:
    if text is None or not text.strip():
        return ()
    return tuple(s.strip() for s in text.split(",") if s.strip())
