"""Experiment metric rows and their CSV schema.

The CSV is the source of truth for every experiment: fixed column order,
UTF-8, comma separation, floats at 9 significant digits, +inf serialized
as "inf", and missing values as empty fields (never zeros).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

from .errors import DataError

COLUMNS = (
    "experiment_id",
    "defense",
    "seed",
    "round",
    "mse",
    "psnr",
    "train_loss",
    "fisher_trace",
    "bound_value",
    "noise_frobenius",
    "prune_ratio",
    "wall_time",
)

_INT_COLUMNS = {"seed", "round"}
_STR_COLUMNS = {"experiment_id", "defense"}


@dataclass
class MetricRow:
    experiment_id: str
    defense: str
    seed: int
    round: int
    mse: float | None = None
    psnr: float | None = None
    train_loss: float | None = None
    fisher_trace: float | None = None
    bound_value: float | None = None
    noise_frobenius: float | None = None
    prune_ratio: float | None = None
    wall_time: float | None = None


def _format(name, value):
    if value is None:
        return ""
    if name in _STR_COLUMNS:
        return str(value)
    if name in _INT_COLUMNS:
        return str(int(value))
    return format(float(value), ".9g")


def _parse(name, text):
    if text == "":
        return None
    if name in _STR_COLUMNS:
        return text
    if name in _INT_COLUMNS:
        return int(text)
    return float(text)


def write_metrics(rows, path):
    """Write metric rows; a header line is always present."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([_format(f.name, getattr(row, f.name)) for f in fields(MetricRow)])


def read_metrics(path):
    """Read metric rows back; schema drift is a hard error."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty metrics file, header required") from None
        if tuple(header) != COLUMNS:
            raise DataError(
                f"{path}: column names {header} do not match schema {list(COLUMNS)}"
            )
        rows = []
        for line in reader:
            if len(line) != len(COLUMNS):
                raise DataError(f"{path}: row has {len(line)} fields, expected {len(COLUMNS)}")
            rows.append(MetricRow(**{name: _parse(name, text) for name, text in zip(COLUMNS, line)}))
        return rows
