"""Cross-validated comparison of RBR against a k-nearest-neighbour baseline.

A benchmark spec file is JSON::

    {"folds": 10, "seed": 42,
     "datasets": [
        {"name": "housing", "source": "data/housing.csv", "target": "medv",
         "task": "regression", "transform": "none",
         "methods": {"rbr": {"k": 100000}, "knn": {"k_grid": [1, 3, 5, 7, 9]}}},
        {"name": "sine", "source": "sine", "task": "regression",
         "methods": {"rbr": {"k": 10000}}}
     ]}

Relative ``source`` paths resolve against the spec file's directory.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import DataError, Dataset, kfold_split, load_csv, simulate_sine, standardize_apply, standardize_fit, write_csv
from .model import DEFAULT_LAMBDAS, TrainConfig, cross_validate, error_percent, evaluate, predict, rmse, train
from .solver import LbfgsConfig

log = logging.getLogger(__name__)

METHODS = ("rbr", "knn")
TRANSFORMS = ("none", "log1p")
KNN_GRID = (1, 3, 5, 7, 9)
SINE_SIZE = 1000


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    source: str
    task: str = "regression"
    target: str = ""
    transform: str = "none"
    methods: dict = field(default_factory=lambda: {"rbr": {}, "knn": {}})

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ValueError(f"{self.name}: unknown task {self.task!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"{self.name}: unknown transform {self.transform!r}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"{self.name}: unknown methods {sorted(unknown)}")
        if self.source != "sine" and not self.target:
            raise ValueError(f"{self.name}: file sources need a target column")
        if self.source == "sine" and self.task != "regression":
            raise ValueError("the sine source is a regression problem")


def load_specs(path) -> tuple[list[BenchmarkSpec], dict]:
    """Parse a spec file; returns the dataset specs and top-level options."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read benchmark spec {path}: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("datasets"), list):
        raise DataError(f"{path}: expected an object with a 'datasets' list")
    specs = []
    for i, d in enumerate(doc["datasets"]):
        d = dict(d)
        src = d.get("source", "")
        if src != "sine" and src and not Path(src).is_absolute():
            d["source"] = str(path.parent / src)
        d.setdefault("name", Path(src).stem if src else f"dataset{i}")
        try:
            specs.append(BenchmarkSpec(**d))
        except TypeError as exc:
            raise DataError(f"{path}: dataset {i}: {exc}") from None
    opts = {k: v for k, v in doc.items() if k != "datasets"}
    return specs, opts


# ---------------------------------------------------------------------------
# Nearest neighbours
# ---------------------------------------------------------------------------

def knn_predict(train_data: Dataset, test_x, k_neighbors: int, task: str | None = None) -> np.ndarray:
    """Brute-force k-nearest-neighbour prediction.

    Distances are Euclidean on predictors standardized with training
    statistics. Equal distances are ordered by training row index.
    Regression averages the neighbour targets; classification takes the
    majority label, with ties going to 0.
    """
    task = task or train_data.task
    k_neighbors = int(k_neighbors)
    if k_neighbors < 1:
        raise ValueError("k_neighbors must be at least 1")
    if k_neighbors > train_data.n:
        raise ValueError(f"k_neighbors={k_neighbors} exceeds the {train_data.n} training rows")
    params = standardize_fit(train_data.x)
    a = standardize_apply(params, train_data.x)
    b = standardize_apply(params, test_x)
    out = np.empty(b.shape[0])
    # squared distances in row chunks to bound memory
    for i0 in range(0, b.shape[0], 1024):
        blk = b[i0:i0 + 1024]
        d2 = ((blk[:, None, :] - a[None, :, :]) ** 2).sum(axis=2)
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k_neighbors]
        votes = train_data.y[nn].mean(axis=1)
        out[i0:i0 + len(blk)] = votes if task == "regression" else (votes > 0.5).astype(np.float64)
    return out


def _knn_metric(data: Dataset, train_rows, test_rows, k):
    pred = knn_predict(data.subset(train_rows), data.x[test_rows], k)
    y = data.y[test_rows]
    return rmse(y, pred) if data.task == "regression" else error_percent(y, pred)


def tune_knn(data: Dataset, grid=KNN_GRID, folds: int = 5, seed: int = 0) -> int:
    """Neighbour count with the lowest inner-CV error; ties go to the smaller k."""
    labels = data.y if data.task == "classification" else None
    split = kfold_split(data.n, min(folds, data.n), seed, labels)
    best, best_err = None, np.inf
    for k in grid:
        errs = []
        for q in range(split.k):
            tr, te = split.train_test(q)
            if k > len(tr):
                break
            errs.append(_knn_metric(data, tr, te, k))
        else:
            err = float(np.mean(errs))
            if err < best_err:
                best, best_err = k, err
    if best is None:
        raise ValueError("no neighbour count in the grid fits the training folds")
    return best


def knn_cross_validate(data: Dataset, folds: int = 10, seed: int = 42, grid=KNN_GRID):
    """Outer k-fold estimate with the neighbour count tuned inside each training part."""
    labels = data.y if data.task == "classification" else None
    split = kfold_split(data.n, folds, seed, labels)
    per_fold, chosen = [], []
    t0 = time.perf_counter()
    for q in range(folds):
        tr, te = split.train_test(q)
        k = tune_knn(data.subset(tr), grid, seed=seed + q + 1)
        per_fold.append(_knn_metric(data, tr, te, k))
        chosen.append(k)
    return per_fold, chosen, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# Benchmark runs
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkRow:
    dataset: str
    method: str
    metric_name: str
    metric_value: float | None
    seconds: float
    bytes: int = 0
    detail: str = ""

    @property
    def failed(self) -> bool:
        return self.metric_value is None


@dataclass
class BenchmarkReport:
    rows: list = field(default_factory=list)

    def cell(self, dataset, method) -> BenchmarkRow:
        for r in self.rows:
            if r.dataset == dataset and r.method == method:
                return r
        raise KeyError((dataset, method))

    def table(self) -> str:
        head = ("dataset", "method", "metric", "value", "seconds", "bytes", "note")
        body = []
        for r in self.rows:
            val = "FAILED" if r.failed else f"{r.metric_value:.4f}"
            body.append((r.dataset, r.method, r.metric_name, val, f"{r.seconds:.1f}", str(r.bytes), r.detail))
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head] + body]
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "method", "metric_name", "metric_value", "seconds", "bytes"])
        for r in self.rows:
            w.writerow([r.dataset, r.method, r.metric_name,
                        "" if r.failed else repr(r.metric_value), f"{r.seconds:.3f}", r.bytes])
        return buf.getvalue()


def _train_config(settings: dict, seed: int, threads) -> TrainConfig:
    lb = LbfgsConfig(history_size=int(settings.get("history", 20)),
                     max_iterations=int(settings.get("max_iters", 500)))
    return TrainConfig(k=int(settings.get("k", 10_000)), lam=settings.get("lambda", DEFAULT_LAMBDAS),
                       seed=int(settings.get("seed", seed)), lbfgs=lb, threads=threads)


def _load(spec: BenchmarkSpec) -> Dataset:
    data = load_csv(spec.source, spec.target, spec.task)
    if spec.transform == "log1p":
        if np.any(data.y <= -1):
            raise DataError(f"{spec.name}: log1p needs targets > -1")
        data = Dataset(data.x, np.log1p(data.y), data.column_names, data.task)
    return data


def _run_sine(spec: BenchmarkSpec, method: str, settings: dict, seed: int, threads) -> BenchmarkRow:
    n = int(settings.get("n", SINE_SIZE))
    tr, te = simulate_sine(n, n, seed)
    t0 = time.perf_counter()
    if method == "rbr":
        cfg = _train_config(settings, seed, threads)
        val = evaluate(train(tr, cfg), te)
        nbytes = cfg.k * ((n + 63) // 64) * 8
        note = "train/test split"
    else:
        k = tune_knn(tr, settings.get("k_grid", KNN_GRID), seed=seed)
        val = rmse(te.y, knn_predict(tr, te.x, k))
        nbytes = 0
        note = f"train/test split, k={k}"
    return BenchmarkRow(spec.name, method, "rmse", val, time.perf_counter() - t0, nbytes, note)


def _run_cell(spec: BenchmarkSpec, data, method: str, settings: dict, folds: int, seed: int, threads):
    if spec.source == "sine":
        return _run_sine(spec, method, settings, seed, threads)
    name = "rmse" if spec.task == "regression" else "error_percent"
    if method == "rbr":
        m = cross_validate(data, _train_config(settings, seed, threads), folds, seed)
        lams = sorted(set(m.lambdas))
        return BenchmarkRow(spec.name, method, name, m.mean, m.seconds, m.feature_bytes,
                            "lambda " + ",".join(f"{v:g}" for v in lams))
    per_fold, chosen, secs = knn_cross_validate(data, folds, seed, settings.get("k_grid", KNN_GRID))
    return BenchmarkRow(spec.name, method, name, float(np.mean(per_fold)), secs, 0,
                        "k " + ",".join(str(v) for v in sorted(set(chosen))))


def run_benchmark(specs, folds: int = 10, seed: int = 42, threads=None) -> BenchmarkReport:
    """Cross-validate every requested (dataset, method) cell in turn.

    A failing cell is recorded with its reason and the run moves on.
    """
    report = BenchmarkReport()
    for spec in specs:
        data, load_error = None, None
        if spec.source != "sine":
            try:
                data = _load(spec)
            except (DataError, OSError, ValueError) as exc:
                load_error = str(exc)
        for method, settings in spec.methods.items():
            settings = settings or {}
            name = "rmse" if spec.task == "regression" else "error_percent"
            if load_error is not None:
                report.rows.append(BenchmarkRow(spec.name, method, name, None, 0.0, 0, load_error))
                continue
            log.info("benchmark %s / %s", spec.name, method)
            t0 = time.perf_counter()
            try:
                row = _run_cell(spec, data, method, settings, folds, seed, threads)
            except Exception as exc:  # isolate the cell, keep the run going
                log.warning("%s / %s failed: %s", spec.name, method, exc)
                row = BenchmarkRow(spec.name, method, name, None, time.perf_counter() - t0, 0,
                                   f"{type(exc).__name__}: {exc}")
            report.rows.append(row)
    return report


def emit_sine_fit(n: int, config: TrainConfig, out_path, seed: int = 1, noise: float = 0.1) -> float:
    """Fit the sine simulation and write ``x, sin(x), yhat`` for the test rows.

    Returns the test RMSE against the noisy targets.
    """
    tr, te = simulate_sine(n, n, seed, noise)
    model = train(tr, config)
    yhat = predict(model, te.x).value
    x = te.x[:, 0]
    write_csv(out_path, ["x", "sin_x", "fitted"], [x, np.sin(x), yhat])
    return rmse(te.y, yhat)
