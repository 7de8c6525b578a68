"""L2-regularized least squares and logistic losses, minimized by L-BFGS.

Both losses leave the intercept (column 0) unpenalized::

    ridge:     sum_i (y_i - s_i)^2                        + lam/2 * sum_{j>=1} beta_j^2
    logistic:  sum_i softplus(s_i) - y_i s_i              + lam/2 * sum_{j>=1} beta_j^2

with ``s = score(F, beta)``. The logistic form is the usual cross-entropy
rewritten so that it never overflows.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .bitfeatures import BitMatrix, correlate, score

log = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

CURVATURE_EPS = 1e-10


@dataclass(frozen=True)
class LbfgsConfig:
    history_size: int = 20
    max_iterations: int = 500
    # on ||grad||_inf / max(1, |loss|)
    gradient_tolerance: float = 1e-6
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_bisections: int = 50

    def __post_init__(self):
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.gradient_tolerance < 0:
            raise ValueError("gradient_tolerance must be >= 0")


@dataclass
class SolveReport:
    beta: np.ndarray
    final_loss: float
    iterations: int
    converged: bool
    message: str = ""
    evaluations: int = 0
    losses: list = field(default_factory=list)


def _check(f: BitMatrix, y, beta, lam):
    y = np.asarray(y, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if y.shape != (f.n,):
        raise ValueError(f"y has shape {y.shape}, expected ({f.n},)")
    if beta.shape != (f.k,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({f.k},)")
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return y, beta


def _penalty(beta, lam):
    tail = beta[1:]
    return 0.5 * lam * float(tail @ tail)


def ridge_loss_grad(f: BitMatrix, y, beta, lam: float):
    """Squared error plus L2 penalty on the non-intercept coefficients."""
    y, beta = _check(f, y, beta, lam)
    resid = y - score(f, beta)
    loss = float(resid @ resid) + _penalty(beta, lam)
    grad = -2.0 * correlate(f, resid)
    grad[1:] += lam * beta[1:]
    return loss, grad


def sigmoid(s):
    s = np.asarray(s, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * s))


def logistic_loss_grad(f: BitMatrix, y, beta, lam: float):
    """Cross-entropy of ``sigmoid(score)`` against 0/1 labels plus L2 penalty."""
    y, beta = _check(f, y, beta, lam)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic loss needs labels in {0, 1}")
    s = score(f, beta)
    loss = float(np.sum(np.logaddexp(0.0, s) - y * s)) + _penalty(beta, lam)
    grad = correlate(f, sigmoid(s) - y)
    grad[1:] += lam * beta[1:]
    return loss, grad


def make_objective(task: str, f: BitMatrix, y, lam: float) -> Objective:
    """Bind data and penalty into a ``beta -> (loss, grad)`` callable."""
    fn = {"regression": ridge_loss_grad, "classification": logistic_loss_grad}[task]
    y = np.asarray(y, dtype=np.float64)
    return lambda beta: fn(f, y, beta, lam)


class LineSearchError(RuntimeError):
    pass


def _cubic_min(a, fa, da, b, fb, db):
    # Minimizer of the cubic through (a, fa, da), (b, fb, db); None if undefined.
    if a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = np.copysign(np.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if np.isfinite(t) else None


def _strong_wolfe(obj, x, f0, g0, d, step, cfg, counter):
    """Return (step, loss, grad) satisfying the strong Wolfe conditions."""
    dg0 = float(g0 @ d)
    c1, c2 = cfg.wolfe_c1, cfg.wolfe_c2

    def phi(a):
        counter[0] += 1
        fa, ga = obj(x + a * d)
        return fa, ga, float(ga @ d)

    def zoom(lo, flo, dlo, glo, hi, fhi, dhi):
        for _ in range(cfg.max_bisections):
            a = _cubic_min(lo, flo, dlo, hi, fhi, dhi) if np.isfinite(fhi) else None
            width = hi - lo
            # keep the trial point away from the bracket ends
            if a is None or not (min(lo, hi) + 0.1 * abs(width) <= a <= max(lo, hi) - 0.1 * abs(width)):
                a = lo + 0.5 * width
            fa, ga, da = phi(a)
            if not np.isfinite(fa) or fa > f0 + c1 * a * dg0 or fa >= flo:
                hi, fhi, dhi = a, fa, da
            else:
                if abs(da) <= -c2 * dg0:
                    return a, fa, ga
                if da * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo, glo = a, fa, da, ga
        if lo > 0 and flo < f0:
            # Armijo holds at lo; curvature could not be met within budget.
            return lo, flo, glo
        raise LineSearchError("strong Wolfe zoom did not find an acceptable step")

    a_prev, f_prev, d_prev, g_prev = 0.0, f0, dg0, g0
    a = step
    for i in range(cfg.max_bisections):
        fa, ga, da = phi(a)
        if not np.isfinite(fa) or fa > f0 + c1 * a * dg0 or (i > 0 and fa >= f_prev):
            return zoom(a_prev, f_prev, d_prev, g_prev, a, fa, da)
        if abs(da) <= -c2 * dg0:
            return a, fa, ga
        if da >= 0:
            return zoom(a, fa, da, ga, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev, g_prev = a, fa, da, ga
        a *= 2.0
    raise LineSearchError("could not bracket a step satisfying the Wolfe conditions")


class _History:
    """Ring buffer of the most recent curvature pairs (s, y)."""

    def __init__(self, size, dim):
        self.s = np.empty((size, dim))
        self.y = np.empty((size, dim))
        self.rho = np.empty(size)
        self.slots = deque(maxlen=size)
        self.size = size

    def __bool__(self):
        return bool(self.slots)

    def clear(self):
        self.slots.clear()

    def push(self, s, y, sy):
        if len(self.slots) < self.size:
            slot = len(self.slots)
        else:
            slot = self.slots[0]
        self.s[slot] = s
        self.y[slot] = y
        self.rho[slot] = 1.0 / sy
        self.slots.append(slot)

    def direction(self, g):
        return _kernels.two_loop(g, self.s, self.y, self.rho, np.array(self.slots, dtype=np.int64))


def lbfgs_minimize(obj: Objective, beta0, config: LbfgsConfig | None = None,
                   callback: Callable[[int, float, float], None] | None = None) -> SolveReport:
    """Minimize a smooth function given only its loss and gradient.

    Parameters
    ----------
    obj : callable
        ``beta -> (loss, grad)``.
    beta0 : array
        Starting point.
    config : LbfgsConfig, optional
    callback : callable, optional
        Called as ``callback(iteration, loss, scaled_grad_norm)`` after every
        accepted step.

    Returns
    -------
    SolveReport
        ``converged`` is False when the iteration cap is hit or the line
        search cannot make progress; ``beta`` is then the best point found.
    """
    cfg = config or LbfgsConfig()
    x = np.array(beta0, dtype=np.float64)
    counter = [1]
    f, g = obj(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValueError("objective is not finite at the starting point")
    pairs = _History(cfg.history_size, x.size)
    losses = [f]

    def gnorm():
        return float(np.max(np.abs(g), initial=0.0)) / max(1.0, abs(f))

    it = 0
    while True:
        gn = gnorm()
        if gn <= cfg.gradient_tolerance:
            return SolveReport(x, f, it, True, "gradient tolerance reached", counter[0], losses)
        if it >= cfg.max_iterations:
            return SolveReport(x, f, it, False, "iteration limit reached", counter[0], losses)
        if pairs:
            d = pairs.direction(g)
            step = 1.0
            if not float(g @ d) < 0:
                pairs.clear()
        if not pairs:
            d = -g
            step = 1.0 / max(1.0, float(np.sqrt(g @ g)))
        try:
            step, f_new, g_new = _strong_wolfe(obj, x, f, g, d, step, cfg, counter)
        except LineSearchError as exc:
            return SolveReport(x, f, it, False, str(exc), counter[0], losses)
        if not f_new < f:
            return SolveReport(x, f, it, False, "no decrease along search direction", counter[0], losses)
        s = step * d
        yv = g_new - g
        sy = float(s @ yv)
        # scale-free form of the usual s'y > eps test; an absolute cut-off
        # drops every pair once steps become short near the optimum
        if sy > CURVATURE_EPS * float(np.sqrt((s @ s) * (yv @ yv))):
            pairs.push(s, yv, sy)
        x = x + s
        f, g = f_new, g_new
        losses.append(f)
        it += 1
        if callback is not None:
            callback(it, f, gnorm())


def _centered_objective(task, f: BitMatrix, y, lam, means):
    # Same loss in coordinates where column j >= 1 is replaced by f_j - means_j
    # and the intercept absorbs the shift; only the conditioning changes.
    y = np.asarray(y, dtype=np.float64)
    if task == "classification" and not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic loss needs labels in {0, 1}")

    def obj(b):
        s = score(f, b) - float(means @ b)
        if task == "regression":
            r = y - s
            loss = float(r @ r)
            grad = -2.0 * (correlate(f, r) - means * r.sum())
        else:
            loss = float(np.sum(np.logaddexp(0.0, s) - y * s))
            q = sigmoid(s) - y
            grad = correlate(f, q) - means * q.sum()
        loss += _penalty(b, lam)
        grad[1:] += lam * b[1:]
        return loss, grad

    return obj


def fit(f: BitMatrix, y, task: str, lam: float, config: LbfgsConfig | None = None,
        center: bool = True, callback=None, beta0=None) -> SolveReport:
    """Estimate coefficients for one penalty value, starting from ``beta0`` (zero by default).

    With ``center`` the search runs on mean-centred bit columns, an exact
    reparametrization that leaves the minimizer unchanged but removes the
    dominant all-ones direction from the curvature. The returned ``beta``
    always refers to the raw bits.
    """
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    plain = make_objective(task, f, y, lam)
    start = np.zeros(f.k) if beta0 is None else np.array(beta0, dtype=np.float64)
    if not center or f.n == 0:
        return lbfgs_minimize(plain, start, config, callback)
    means = f.column_counts() / f.n
    means[0] = 0.0
    start[0] += float(means @ start)
    rep = lbfgs_minimize(_centered_objective(task, f, y, lam, means), start, config, callback)
    beta = rep.beta.copy()
    beta[0] -= float(means @ beta)
    rep.beta = beta
    rep.final_loss = plain(beta)[0]
    return rep
