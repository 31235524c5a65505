"""Loading, validating and standardizing observational tabular data."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Dataset:
    """Covariate matrix ``X`` (one row per individual) and outcome vector ``y``."""

    covariates: np.ndarray
    outcomes: np.ndarray
    column_names: tuple[str, ...] = ()
    outcome_name: str = "y"

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.outcomes, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size == y.size else X.reshape(1, -1)
        if X.ndim != 2:
            raise ValidationError(f"covariates must be 2-d, got shape {X.shape}")
        if X.shape[1] < 1:
            raise ValidationError("need at least one covariate column")
        if X.shape[0] != y.shape[0]:
            raise ValidationError(
                f"{X.shape[0]} covariate rows but {y.shape[0]} outcomes")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("dataset contains non-finite values")
        names = tuple(self.column_names) or tuple(f"x{s + 1}" for s in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValidationError(
                f"{len(names)} column names for {X.shape[1]} covariates")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise ValidationError(f"unknown covariate column {name!r}") from None

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.covariates[rows], self.outcomes[rows],
                       self.column_names, self.outcome_name)


@dataclass(frozen=True)
class ScalingInfo:
    """Per-column centering and scaling; the last entry refers to the outcome."""

    means: np.ndarray
    scales: np.ndarray
    columns: tuple[str, ...] = field(default=())

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float).reshape(-1)
        scales = np.asarray(self.scales, dtype=float).reshape(-1)
        if means.shape != scales.shape:
            raise ValidationError("means and scales differ in length")
        if np.any(~np.isfinite(scales)) or np.any(scales <= 0):
            raise ValidationError("scales must be finite and strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def covariate_means(self) -> np.ndarray:
        return self.means[:-1]

    @property
    def covariate_scales(self) -> np.ndarray:
        return self.scales[:-1]

    @property
    def outcome_mean(self) -> float:
        return float(self.means[-1])

    @property
    def outcome_scale(self) -> float:
        return float(self.scales[-1])

    def apply(self, data: Dataset) -> Dataset:
        X = (data.covariates - self.covariate_means) / self.covariate_scales
        y = (data.outcomes - self.outcome_mean) / self.outcome_scale
        return Dataset(X, y, data.column_names, data.outcome_name)

    def invert(self, data: Dataset) -> Dataset:
        X = data.covariates * self.covariate_scales + self.covariate_means
        y = data.outcomes * self.outcome_scale + self.outcome_mean
        return Dataset(X, y, data.column_names, data.outcome_name)

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "scales": self.scales.tolist(),
                "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, obj: dict) -> "ScalingInfo":
        try:
            return cls(obj["means"], obj["scales"], tuple(obj.get("columns", ())))
        except KeyError as exc:
            raise ValidationError(f"scaling info missing field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ScalingInfo":
        return cls.from_dict(json.loads(text))


def load_dataset(path, outcome_column: str) -> Dataset:
    """Read a CSV with one header row; ``outcome_column`` becomes ``y``.

    Every other column is a covariate, kept in file order.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if outcome_column not in header:
            raise ValidationError(
                f"{path}: outcome column {outcome_column!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{path}: row {lineno}, column {col!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise ValidationError(
                        f"{path}: row {lineno}, column {col!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    table = np.array(rows, dtype=float)
    j = header.index(outcome_column)
    names = tuple(h for i, h in enumerate(header) if i != j)
    if not names:
        raise ValidationError(f"{path}: no covariate columns besides the outcome")
    return Dataset(np.delete(table, j, axis=1), table[:, j], names, outcome_column)


def save_dataset(data: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.column_names) + [data.outcome_name])
        for x, y in zip(data.covariates, data.outcomes):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def standardize(data: Dataset) -> tuple[Dataset, ScalingInfo]:
    """Center every column and scale it to unit sample variance (n - 1 denominator)."""
    if data.n < 2:
        raise ValidationError("standardize needs at least 2 rows")
    table = np.column_stack([data.covariates, data.outcomes])
    names: Sequence[str] = list(data.column_names) + [data.outcome_name]
    means = table.mean(axis=0)
    scales = table.std(axis=0, ddof=1)
    for name, col, s in zip(names, table.T, scales):
        if s == 0 or np.ptp(col) == 0:
            raise ValidationError(f"column {name!r} is constant; drop it before standardizing")
    info = ScalingInfo(means, scales, tuple(names))
    return info.apply(data), info
