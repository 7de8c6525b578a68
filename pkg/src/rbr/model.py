"""Train, predict, cross-validate and persist random-bits models."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .bitfeatures import BitMatrix, FeatureBank, apply_bank, generate_bank, row_gram, score
from .dataio import Dataset, StandardizerParams, kfold_split, standardize_apply, standardize_fit
from .solver import LbfgsConfig, SolveReport, fit, sigmoid

log = logging.getLogger(__name__)

FORMAT_VERSION = "rbr/1"
DEFAULT_LAMBDAS = (0.01, 0.1, 1.0, 10.0, 100.0)
# Above this many training rows the n x n Gram matrix used for penalty
# selection gets too large and selection falls back to bit-space solves.
GRAM_MAX_ROWS = 6000


class ModelFormatError(ValueError):
    """A model file that cannot be read back."""


@dataclass(frozen=True)
class TrainConfig:
    k: int = 10_000
    lam: float | Sequence[float] = DEFAULT_LAMBDAS
    seed: int = 42
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    threads: int | None = None
    inner_folds: int = 5
    center: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be at least 2, got {self.k}")
        if any(not (v >= 0 and math.isfinite(v)) for v in self.lambdas):
            raise ValueError(f"penalties must be finite and >= 0, got {self.lambdas}")
        if self.inner_folds < 2:
            raise ValueError("inner_folds must be at least 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")

    @property
    def lambdas(self) -> tuple[float, ...]:
        if isinstance(self.lam, (int, float)):
            return (float(self.lam),)
        vals = tuple(float(v) for v in self.lam)
        if not vals:
            raise ValueError("empty penalty grid")
        return vals


@dataclass(frozen=True, eq=False)
class RbrModel:
    task: str
    standardizer: StandardizerParams
    bank: FeatureBank
    beta: np.ndarray
    lam: float
    seed: int
    column_names: tuple = ()
    target: str = ""
    format_version: str = FORMAT_VERSION
    report: SolveReport | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.beta.shape != (self.bank.k,):
            raise ValueError(f"beta has {self.beta.shape[0]} entries for {self.bank.k} columns")
        if self.standardizer.m != self.bank.m:
            raise ValueError("standardizer and feature bank disagree on input width")
        if not np.all(np.isfinite(self.beta)) or not self.lam >= 0:
            raise ValueError("coefficients must be finite and lambda >= 0")
        if self.column_names and len(self.column_names) != self.m:
            raise ValueError("column name count does not match input width")

    @property
    def k(self) -> int:
        return self.bank.k

    @property
    def m(self) -> int:
        return self.bank.m

    def features(self, x) -> BitMatrix:
        return apply_bank(self.bank, standardize_apply(self.standardizer, x))

    def __eq__(self, other):
        if not isinstance(other, RbrModel):
            return NotImplemented
        return (
            self.task == other.task
            and self.standardizer == other.standardizer
            and self.bank == other.bank
            and np.array_equal(self.beta, other.beta)
            and self.lam == other.lam
            and self.seed == other.seed
            and tuple(self.column_names) == tuple(other.column_names)
            and self.target == other.target
            and self.format_version == other.format_version
        )


class Predictions(NamedTuple):
    """``value`` is the fitted value (regression) or P(y = 1) (classification)."""

    value: np.ndarray
    label: np.ndarray | None


def set_threads(threads: int | None) -> int:
    """Limit kernel parallelism; returns the thread count actually in effect."""
    import numba

    avail = numba.config.NUMBA_NUM_THREADS
    n = avail if threads is None else max(1, min(int(threads), avail))
    numba.set_num_threads(n)
    return n


def _progress(label):
    def cb(it, loss, gnorm):
        if it % 10 == 0:
            log.info("%s iter %d  loss %.6g  scaled |grad| %.3g", label, it, loss, gnorm)
    return cb


def train(data: Dataset, config: TrainConfig | None = None, target: str = "") -> RbrModel:
    """Standardize, draw the feature bank, pick the penalty, and fit coefficients."""
    cfg = config or TrainConfig()
    set_threads(cfg.threads)
    params = standardize_fit(data.x)
    x_std = standardize_apply(params, data.x)
    bank, f = generate_bank(x_std, cfg.k, cfg.seed)
    lams = cfg.lambdas
    if len(lams) > 1:
        lam, _ = select_lambda(f, data.y, data.task, lams, cfg)
        log.info("selected lambda %g", lam)
    else:
        lam = lams[0]
    rep = fit(f, data.y, data.task, lam, cfg.lbfgs, cfg.center, _progress(f"lambda={lam:g}"))
    if not rep.converged:
        log.info("solver stopped after %d iterations: %s", rep.iterations, rep.message)
    return RbrModel(data.task, params, bank, rep.beta, lam, int(cfg.seed),
                    tuple(data.column_names), target, report=rep)


def predict(model: RbrModel, x) -> Predictions:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.m:
        raise ValueError(f"model expects {model.m} columns, got shape {x.shape}")
    s = score(model.features(x), model.beta)
    if model.task == "regression":
        return Predictions(s, None)
    return Predictions(sigmoid(s), (s >= 0).astype(np.int64))


# ---------------------------------------------------------------------------
# Penalty selection
# ---------------------------------------------------------------------------

def _inner_seed(seed: int) -> int:
    return (int(seed) + 0x9E3779B97F4A7C15) % 2**64


def select_lambda(f: BitMatrix, y, task: str, lams, cfg: TrainConfig):
    """Pick the penalty with the lowest inner cross-validated loss.

    Validation loss is squared error for regression and deviance for
    classification; ties go to the larger penalty. Inner folds reuse the
    bits of ``f``. Returns ``(lambda, {lambda: mean validation loss})``.
    """
    y = np.asarray(y, dtype=np.float64)
    folds = kfold_split(f.n, min(cfg.inner_folds, f.n), _inner_seed(cfg.seed),
                        y if task == "classification" else None)
    order = sorted(set(lams), reverse=True)
    if f.n <= GRAM_MAX_ROWS:
        losses = _select_gram(f, y, task, order, folds)
    else:
        losses = _select_bits(f, y, task, order, folds, cfg)
    scores = {lam: losses[lam] / f.n for lam in order}
    best = min(order, key=lambda lam: (scores[lam], -lam))
    return best, scores


def _deviance(s, y):
    return float(np.sum(np.logaddexp(0.0, s) - y * s))


def _select_bits(f, y, task, order, folds, cfg):
    losses = dict.fromkeys(order, 0.0)
    for q in range(folds.k):
        tr, va = folds.train_test(q)
        ft, fv = f.take_rows(tr), f.take_rows(va)
        beta = None
        for lam in order:
            beta = fit(ft, y[tr], task, lam, cfg.lbfgs, cfg.center, beta0=beta).beta
            s = score(fv, beta)
            losses[lam] += float(np.sum((y[va] - s) ** 2)) if task == "regression" else _deviance(s, y[va])
    return losses


def _select_gram(f, y, task, order, folds):
    # Every minimizer has its non-intercept part in the span of the training
    # rows, so each inner fit reduces to an n_train-dimensional problem on the
    # Gram matrix of the bits. Inner Gram matrices are blocks of this one.
    gram = row_gram(f)
    losses = dict.fromkeys(order, 0.0)
    for q in range(folds.k):
        tr, va = folds.train_test(q)
        gtt = gram[np.ix_(tr, tr)]
        gvt = gram[np.ix_(va, tr)]
        if task == "regression":
            for lam, pred in _ridge_path(gtt, gvt, y[tr], order):
                losses[lam] += float(np.sum((y[va] - pred) ** 2))
        else:
            for lam, s in _logistic_path(gtt, gvt, y[tr], order):
                losses[lam] += _deviance(s, y[va])
    return losses


def _ridge_path(gtt, gvt, y, order):
    ybar = y.mean()
    gc = gtt - gtt.mean(axis=0) - gtt.mean(axis=1)[:, None] + gtt.mean()
    e, u = np.linalg.eigh(gc)
    e = np.clip(e, 0.0, None)
    uy = u.T @ (y - ybar)
    floor = 1e-12 * max(e.max(), 1.0)
    for lam in order:
        denom = e + 0.5 * lam
        inv = np.divide(1.0, denom, out=np.zeros_like(denom), where=denom > floor)
        a = u @ (inv * uy)
        a -= a.mean()
        c = ybar - (gtt @ a).mean()
        yield lam, c + gvt @ a


def _logistic_path(gtt, gvt, y, order):
    e, u = np.linalg.eigh(gtt)
    keep = e > 1e-10 * max(e.max(), 1.0)
    root = np.sqrt(e[keep])
    phi = u[:, keep] * root
    back = gvt @ (u[:, keep] / root)
    theta = np.zeros(phi.shape[1] + 1)
    for lam in order:
        theta = _logistic_newton(phi, y, lam, theta)
        yield lam, theta[0] + back @ theta[1:]


def _logistic_newton(phi, y, lam, theta, max_iter=100, tol=1e-10):
    """Damped Newton for L2 logistic regression with an unpenalized intercept."""
    n, r = phi.shape
    design = np.hstack([np.ones((n, 1)), phi])
    pen = np.full(r + 1, lam)
    pen[0] = 0.0

    def loss(t):
        s = design @ t
        return _deviance(s, y) + 0.5 * float(np.sum(pen * t * t)), s

    cur, s = loss(theta)
    for _ in range(max_iter):
        p = sigmoid(s)
        g = design.T @ (p - y) + pen * theta
        if np.max(np.abs(g)) <= tol * max(1.0, abs(cur)):
            break
        w = p * (1.0 - p)
        h = (design.T * w) @ design
        h[np.diag_indices_from(h)] += pen + 1e-12
        try:
            d = -np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(h, g, rcond=None)[0]
        slope = float(g @ d)
        t = 1.0
        while True:
            new, s_new = loss(theta + t * d)
            if new <= cur + 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if not new < cur:
            break
        improvement = cur - new
        theta, cur, s = theta + t * d, new, s_new
        if improvement <= 1e-14 * max(1.0, abs(cur)):
            break
    return theta


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass
class EvalMetrics:
    task: str
    metric_name: str
    per_fold: list
    mean: float
    seconds: float
    lambdas: list = field(default_factory=list)
    feature_bytes: int = 0


def rmse(y, yhat) -> float:
    return float(np.sqrt(np.mean((np.asarray(y) - np.asarray(yhat)) ** 2)))


def error_percent(y, label) -> float:
    return float(100.0 * np.mean(np.asarray(y) != np.asarray(label)))


def evaluate(model: RbrModel, data: Dataset) -> float:
    pred = predict(model, data.x)
    if model.task == "regression":
        return rmse(data.y, pred.value)
    return error_percent(data.y, pred.label)


def cross_validate(data: Dataset, config: TrainConfig | None = None, folds: int = 10,
                   seed: int | None = None) -> EvalMetrics:
    """k-fold estimate of RMSE (regression) or error percentage (classification).

    Standardizer, feature bank, penalty and coefficients are all fitted on
    the training part of each fold only.
    """
    cfg = config or TrainConfig()
    if folds < 2:
        raise ValueError("folds must be at least 2")
    split = kfold_split(data.n, folds, cfg.seed if seed is None else seed,
                        data.y if data.task == "classification" else None)
    name = "rmse" if data.task == "regression" else "error_percent"
    per_fold, lams = [], []
    peak = 0
    t0 = time.perf_counter()
    for q in range(folds):
        tr, te = split.train_test(q)
        model = train(data.subset(tr), cfg)
        per_fold.append(evaluate(model, data.subset(te)))
        lams.append(model.lam)
        peak = max(peak, _bitmatrix_bytes(model, len(tr)))
        log.info("fold %d/%d  %s %.4f  lambda %g", q + 1, folds, name, per_fold[-1], model.lam)
    return EvalMetrics(data.task, name, per_fold, float(np.mean(per_fold)),
                       time.perf_counter() - t0, lams, peak)


def _bitmatrix_bytes(model: RbrModel, n: int) -> int:
    return model.k * ((n + 63) // 64) * 8


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return format(float(v), ".17g")


def save_model(model: RbrModel, path) -> None:
    """Write a line-oriented text file; see ``load_model`` for the layout."""
    b = model.bank
    lines = [
        FORMAT_VERSION,
        f"task {model.task}",
        f"k {model.k}",
        f"seed {model.seed}",
        f"lambda {_fmt(model.lam)}",
        f"m {model.m}",
        "columns " + json.dumps(list(model.column_names)),
        "target " + json.dumps(model.target),
        "means " + " ".join(_fmt(v) for v in model.standardizer.means),
        "stds " + " ".join(_fmt(v) for v in model.standardizer.stds),
        f"features {b.k - 1}",
    ]
    for j in range(b.k - 1):
        nv = int(b.n_vars[j])
        lines.append(" ".join(
            [str(nv)]
            + [str(int(v)) for v in b.var_indices[j, :nv]]
            + [_fmt(v) for v in b.weights[j, :nv]]
            + [_fmt(b.thresholds[j])]
        ))
    lines.append(f"beta {model.k}")
    lines.extend(_fmt(v) for v in model.beta)
    lines.append(f"end {len(lines)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_model(path) -> RbrModel:
    """Read a model written by ``save_model``.

    Layout: version line; ``task``, ``k``, ``seed``, ``lambda``, ``m`` header
    lines; ``columns`` and ``target`` as JSON; ``means`` and ``stds`` rows;
    ``features <k-1>`` followed by one line per feature (count, indices,
    weights, threshold); ``beta <k>`` followed by one coefficient per line;
    ``end <lines before end>``.
    """
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError:
        raise ModelFormatError(f"{path}: not a model file (non-ASCII content)") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ModelFormatError(f"{path}: empty model file")
    if lines[0] != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported model format {lines[0]!r}, expected {FORMAT_VERSION!r}")
    last = lines[-1].split()
    if len(last) != 2 or last[0] != "end" or not last[1].isdigit():
        raise ModelFormatError(f"{path}: truncated model file (missing end record)")
    if int(last[1]) != len(lines) - 1:
        raise ModelFormatError(f"{path}: truncated model file ({len(lines) - 1} records, end says {last[1]})")
    pos = 1

    def field_line(name):
        nonlocal pos
        parts = lines[pos].split(" ")
        if parts[0] != name:
            raise ModelFormatError(f"{path}:{pos + 1}: expected {name!r}, found {parts[0]!r}")
        pos += 1
        return parts[1:]

    try:
        task = field_line("task")[0]
        k = int(field_line("k")[0])
        seed = int(field_line("seed")[0])
        lam = float(field_line("lambda")[0])
        m = int(field_line("m")[0])
        columns = tuple(json.loads(" ".join(field_line("columns"))))
        target = json.loads(" ".join(field_line("target")))
        means = np.array([float(v) for v in field_line("means")])
        stds = np.array([float(v) for v in field_line("stds")])
        q = int(field_line("features")[0])
        if q != k - 1 or means.shape != (m,) or stds.shape != (m,):
            raise ModelFormatError(f"{path}: header counts disagree")
        idx = np.zeros((q, 3), dtype=np.int64)
        wts = np.zeros((q, 3))
        nvs = np.zeros(q, dtype=np.int64)
        thr = np.zeros(q)
        for j in range(q):
            parts = lines[pos].split(" ")
            nv = int(parts[0])
            if not 1 <= nv <= 3 or len(parts) != 2 * nv + 2:
                raise ModelFormatError(f"{path}:{pos + 1}: malformed feature record")
            nvs[j] = nv
            idx[j, :nv] = [int(v) for v in parts[1:1 + nv]]
            wts[j, :nv] = [float(v) for v in parts[1 + nv:1 + 2 * nv]]
            thr[j] = float(parts[-1])
            pos += 1
        nb = int(field_line("beta")[0])
        if nb != k:
            raise ModelFormatError(f"{path}: beta count {nb} != k {k}")
        beta = np.array([float(v) for v in lines[pos:pos + k]])
        pos += k
        if pos != len(lines) - 1:
            raise ModelFormatError(f"{path}: unexpected extra records")
        bank = FeatureBank(idx, wts, nvs, thr, seed, m)
        return RbrModel(task, StandardizerParams(means, stds), bank, beta, lam, seed, columns, target)
    except ModelFormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise ModelFormatError(f"{path}: invalid model file near line {pos + 1}: {exc}") from exc
