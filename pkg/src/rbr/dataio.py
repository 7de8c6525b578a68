"""Tabular data loading, standardization, fold assignment and the sine simulation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TASKS = ("regression", "classification")
STD_FLOOR = 1e-12


class DataError(ValueError):
    """Input data that cannot be used as given."""


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    column_names: list = field(default_factory=list)
    task: str = "regression"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"x must be 2-D, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DataError(f"y has {y.shape} entries for {x.shape[0]} rows")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise DataError("dataset contains missing or non-finite values")
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")
        if self.task == "classification" and not np.all((y == 0) | (y == 1)):
            bad = int(np.flatnonzero((y != 0) & (y != 1))[0])
            raise DataError(f"classification target must be 0 or 1; row {bad + 1} has {y[bad]!r}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if not self.column_names:
            object.__setattr__(self, "column_names", [f"x{j}" for j in range(x.shape[1])])

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.x[rows], self.y[rows], list(self.column_names), self.task)


def read_table(path) -> tuple[list, np.ndarray]:
    """Read a header row plus numeric rows; returns ``(header, matrix)``."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        seen = set()
        for h in header:
            if h in seen:
                raise DataError(f"{path}: duplicate column name {h!r}")
            seen.add(h)
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            vals = []
            for name, cell in zip(header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {name!r} has non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: column {name!r} has non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def load_csv(path, target_column: str, task: str = "regression") -> Dataset:
    """Read a comma-separated file with a header row.

    Every column except ``target_column`` becomes a predictor, in file order.
    """
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}; expected one of {TASKS}")
    header, data = read_table(path)
    if target_column not in header:
        raise DataError(f"{path}: target column {target_column!r} not in header {header}")
    t = header.index(target_column)
    predictors = [h for h in header if h != target_column]
    if not predictors:
        raise DataError(f"{path}: no predictor columns")
    if data.shape[0] < 2:
        raise DataError(f"{path}: need at least 2 rows, found {data.shape[0]}")
    return Dataset(np.delete(data, t, axis=1), data[:, t], predictors, task)


def select_columns(path, names) -> np.ndarray:
    """Predictor matrix with ``names`` picked from a CSV by header, in that order."""
    header, data = read_table(path)
    missing = [c for c in names if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return data[:, [header.index(c) for c in names]]


def write_csv(path, header, columns) -> None:
    """Write equal-length columns with full float precision."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True, eq=False)
class StandardizerParams:
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        if self.means.shape != self.stds.shape or self.means.ndim != 1:
            raise ValueError("means and stds must be 1-D arrays of equal length")
        if not np.all(self.stds > 0) or not np.all(np.isfinite(self.means)):
            raise ValueError("standard deviations must be positive and means finite")

    @property
    def m(self) -> int:
        return len(self.means)

    def __eq__(self, other):
        if not isinstance(other, StandardizerParams):
            return NotImplemented
        return np.array_equal(self.means, other.means) and np.array_equal(self.stds, other.stds)


def standardize_fit(x) -> StandardizerParams:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("standardize_fit needs a 2-D matrix with at least 2 rows")
    means = x.mean(axis=0)
    stds = x.std(axis=0, ddof=1)
    stds[stds < STD_FLOOR] = 1.0
    return StandardizerParams(means, stds)


def standardize_apply(params: StandardizerParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.m:
        raise ValueError(f"expected {params.m} columns, got shape {x.shape}")
    return (x - params.means) / params.stds


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    k: int

    def train_test(self, fold: int):
        test = np.flatnonzero(self.fold_of == fold)
        train = np.flatnonzero(self.fold_of != fold)
        return train, test

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k)


def kfold_split(n: int, k: int, seed: int, labels=None) -> FoldAssignment:
    """Shuffle rows with ``seed`` and deal them round-robin into ``k`` folds.

    With ``labels`` the dealing runs class by class, continuing the fold
    counter across classes, so every fold gets its share of each class and
    overall fold sizes still differ by at most one.
    """
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError("labels must have one entry per row")
        order = np.concatenate([order[labels[order] == c] for c in np.unique(labels)])
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % k
    return FoldAssignment(fold_of, k)


def simulate_sine(n_train: int, n_test: int, seed: int, noise: float = 0.1) -> tuple[Dataset, Dataset]:
    """Draw X uniform on (-10 pi, 10 pi) and Y = sin(X) + N(0, noise^2)."""
    if n_train < 1 or n_test < 1:
        raise ValueError("sample counts must be positive")
    rng = np.random.default_rng(seed)
    lim = 10 * np.pi
    out = []
    for n in (n_train, n_test):
        x = rng.uniform(-lim, lim, size=n)
        # uniform() may return the lower bound itself
        while np.any(x <= -lim):
            bad = x <= -lim
            x[bad] = rng.uniform(-lim, lim, size=int(bad.sum()))
        y = np.sin(x) + noise * rng.standard_normal(n)
        out.append(Dataset(x[:, None], y, ["x"], "regression"))
    return out[0], out[1]
