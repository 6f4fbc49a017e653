"""Classical Cox proportional hazards: Newton-Raphson fit and Breslow baseline.

Everything here is plain numpy on full-data risk sets; it shares no code
with the autodiff loss so the two can check each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import Diverged, InvalidArgument
from .survival import IdleEvent, StepFunction


@dataclass
class CoxFit:
    beta: np.ndarray
    log_likelihood: float
    n_iterations: int
    converged: bool


@dataclass
class BaselineHazard:
    cumulative: StepFunction


def _prepare(X, durations, events):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    t = np.asarray(durations, dtype=np.float64).reshape(-1)
    d = np.asarray(events, dtype=np.int64).reshape(-1)
    if X.shape[0] != t.size or d.size != t.size:
        raise InvalidArgument(f"X rows ({X.shape[0]}), durations ({t.size}), events ({d.size}) differ")
    if t.size == 0:
        raise InvalidArgument("empty input")
    order = np.argsort(-t, kind="stable")
    ts = t[order]
    # risk set of each sorted row ends at the last row with an equal duration
    last = np.empty(ts.size, dtype=np.int64)
    j = ts.size - 1
    for i in range(ts.size - 1, -1, -1):
        if i < ts.size - 1 and ts[i] != ts[i + 1]:
            j = i
        last[i] = j
    return X[order], ts, d[order], last


def _loglik_parts(beta, Xs, ds, last, need_hessian=True):
    eta = Xs @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    s0 = np.cumsum(w)[last]
    s1 = np.cumsum(w[:, None] * Xs, axis=0)[last]
    ev = ds == 1
    ll = float(np.sum(eta[ev] - shift - np.log(s0[ev])))
    xbar = s1[ev] / s0[ev, None]
    grad = (Xs[ev] - xbar).sum(axis=0)
    hess = None
    if need_hessian:
        # sum_i S2(i)/S0(i) = X' diag(w * c) X, c_j = sum of 1/S0(i) over risk sets holding j
        acc = np.zeros(w.size)
        np.add.at(acc, last[ev], 1.0 / s0[ev])
        c = np.cumsum(acc[::-1])[::-1]
        hess = -((Xs * (w * c)[:, None]).T @ Xs - xbar.T @ xbar)
    return ll, grad, hess


def partial_log_likelihood(X, beta, durations, events) -> float:
    """Breslow-tie log partial likelihood at ``beta``."""
    Xs, _, ds, last = _prepare(X, durations, events)
    return _loglik_parts(np.asarray(beta, dtype=np.float64), Xs, ds, last, need_hessian=False)[0]


def partial_likelihood_gradient(X, beta, durations, events) -> np.ndarray:
    Xs, _, ds, last = _prepare(X, durations, events)
    return _loglik_parts(np.asarray(beta, dtype=np.float64), Xs, ds, last, need_hessian=False)[1]


def fit_coxph_arrays(X, durations, events, max_iter: int = 100, tol: float = 1e-8) -> CoxFit:
    Xs, _, ds, last = _prepare(X, durations, events)
    if not (ds == 1).any():
        raise InvalidArgument("no uncensored events")
    p = Xs.shape[1]
    if p < 1:
        raise InvalidArgument("need at least one covariate")
    beta = np.zeros(p)
    ll, grad, hess = _loglik_parts(beta, Xs, ds, last)
    it = 0
    while it < max_iter:
        if np.max(np.abs(grad)) <= tol:
            return CoxFit(beta, ll, it, True)
        step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        it += 1
        scale = 1.0
        for _ in range(11):
            cand = beta + scale * step
            with np.errstate(over="ignore", invalid="ignore"):
                ll_new, g_new, h_new = _loglik_parts(cand, Xs, ds, last)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            scale *= 0.5
        else:
            if not np.isfinite(ll_new):
                raise Diverged("non-finite partial likelihood", beta=beta.copy())
            # no ascent direction left at machine precision
            return CoxFit(beta, ll, it, bool(np.max(np.abs(grad)) <= tol))
        beta, ll, grad, hess = cand, ll_new, g_new, h_new
    return CoxFit(beta, ll, it, bool(np.max(np.abs(grad)) <= tol))


def fit_coxph(events: Sequence[IdleEvent], max_iter: int = 100, tol: float = 1e-8) -> CoxFit:
    if not events:
        raise InvalidArgument("empty input")
    X = np.stack([np.asarray(e.covariates, dtype=np.float64) for e in events])
    return fit_coxph_arrays(X, [e.duration for e in events], [e.event for e in events], max_iter, tol)


def breslow_baseline(durations, events, risks) -> BaselineHazard:
    """Cumulative baseline hazard given log-risk scores aligned with the data."""
    t = np.asarray(durations, dtype=np.float64).reshape(-1)
    d = np.asarray(events, dtype=np.int64).reshape(-1)
    r = np.asarray(risks, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise InvalidArgument("empty input")
    if r.size != t.size or d.size != t.size:
        raise InvalidArgument("durations, events and risks must align")
    if not np.all(np.isfinite(r)):
        raise InvalidArgument("risks must be finite")
    times = np.unique(t[d == 1])
    if times.size == 0:
        return BaselineHazard(StepFunction([], [], 0.0))
    shift = r.max()
    w = np.exp(r - shift)
    order = np.argsort(t)
    ts, ws = t[order], w[order]
    tail = np.cumsum(ws[::-1])[::-1]
    start = np.searchsorted(ts, times, side="left")
    at_risk = tail[start]
    n_events = np.bincount(np.searchsorted(times, t[d == 1]), minlength=times.size)
    increments = n_events / at_risk * np.exp(-shift)
    return BaselineHazard(StepFunction(times, np.cumsum(increments), 0.0))


def survival_curve(baseline: BaselineHazard, risk: float) -> StepFunction:
    risk = float(risk)
    if not np.isfinite(risk):
        raise InvalidArgument(f"risk must be finite, got {risk}")
    scale = np.exp(risk)
    return baseline.cumulative.map(lambda h: np.exp(-h * scale))


def survival_at(baseline: BaselineHazard, risks, t: float) -> np.ndarray:
    """Predicted S(t | x) for many risk scores at one time."""
    r = np.asarray(risks, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise InvalidArgument("risks must be finite")
    return np.exp(-baseline.cumulative(t) * np.exp(r))
