"""Concordance, IPCW Brier score and integrated Brier score."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateWeights, InvalidArgument, UndefinedMetric
from .survival import StepFunction, kaplan_meier

_CHUNK = 512


def _aligned(risks, durations, events):
    r = np.asarray(risks, dtype=np.float64).reshape(-1)
    t = np.asarray(durations, dtype=np.float64).reshape(-1)
    e = np.asarray(events).reshape(-1).astype(np.int64)
    if not (r.size == t.size == e.size):
        raise InvalidArgument(f"risks ({r.size}), durations ({t.size}), events ({e.size}) differ")
    return r, t, e


def concordance(risks, durations, events, horizon: float | None = None) -> tuple[float, int]:
    """Harrell concordance and the number of usable pairs.

    A pair (i, j) is usable when T_i < T_j and subject i had the event; with a
    horizon, T_i must also be <= horizon.  Tied risks count one half.
    """
    r, t, e = _aligned(risks, durations, events)
    anchor = e == 1
    if horizon is not None:
        anchor &= t <= horizon
    idx = np.flatnonzero(anchor)
    num = 0.0
    pairs = 0
    for start in range(0, idx.size, _CHUNK):
        rows = idx[start:start + _CHUNK]
        later = t[None, :] > t[rows, None]
        diff = r[rows, None] - r[None, :]
        num += np.count_nonzero(later & (diff > 0)) + 0.5 * np.count_nonzero(later & (diff == 0))
        pairs += int(np.count_nonzero(later))
    if pairs == 0:
        raise UndefinedMetric("no usable pairs" + ("" if horizon is None else f" by horizon {horizon}"))
    return num / pairs, pairs


def c_index(risks, durations, events) -> float:
    return concordance(risks, durations, events)[0]


def c_index_truncated(risks, durations, events, horizon: float) -> float:
    if not horizon > 0:
        raise InvalidArgument(f"horizon must be > 0, got {horizon}")
    return concordance(risks, durations, events, horizon)[0]


def censoring_km(durations, events) -> StepFunction:
    """Kaplan-Meier estimate of the censoring distribution G (flipped indicators)."""
    return kaplan_meier(durations, 1 - np.asarray(events, dtype=np.int64))


def _survival_values(survival, horizon: float, n: int) -> np.ndarray:
    if isinstance(survival, np.ndarray) and survival.dtype != object:
        s = survival.astype(np.float64).reshape(-1)
    else:
        s = np.array([float(curve(horizon)) if callable(curve) else float(curve) for curve in survival])
    if s.size != n:
        raise InvalidArgument(f"{s.size} survival predictions for {n} subjects")
    return s


def ipcw_brier(survival_curves, durations, events, horizon: float,
               censor_km: StepFunction) -> float:
    """Inverse-probability-of-censoring weighted Brier score at ``horizon``.

    ``survival_curves`` is either a sequence of step functions S(.|x_i) or an
    array of their values at ``horizon``.  Subjects still at risk past the
    horizon are scored against 1, subjects with an event by then against 0,
    and subjects censored before the horizon get weight zero.
    """
    t = np.asarray(durations, dtype=np.float64).reshape(-1)
    e = np.asarray(events).reshape(-1).astype(np.int64)
    s = _survival_values(survival_curves, horizon, t.size)
    died = (t <= horizon) & (e == 1)
    alive = t > horizon
    w = np.zeros(t.size)
    if died.any():
        g_event = np.asarray(censor_km.left_limit(t[died]), dtype=np.float64)
        if np.any(g_event <= 0):
            bad = float(t[died][np.argmin(g_event)])
            raise DegenerateWeights(f"censoring survival is zero just before t={bad}")
        w[died] = 1.0 / g_event
    if alive.any():
        g_h = float(censor_km(horizon))
        if g_h <= 0:
            raise DegenerateWeights(f"censoring survival is zero at t={horizon}")
        w[alive] = 1.0 / g_h
    status = alive.astype(np.float64)
    return float(np.mean(w * (status - s) ** 2))


def integrated_brier(times, brier_values, tau: float) -> float:
    """Time-average of a sampled Brier curve over [times[0], tau] by trapezoids."""
    if not tau > 0:
        raise InvalidArgument(f"tau must be > 0, got {tau}")
    ts = np.asarray(times, dtype=np.float64).reshape(-1)
    bs = np.asarray(brier_values, dtype=np.float64).reshape(-1)
    keep = ts <= tau
    ts, bs = ts[keep], bs[keep]
    if ts.size < 2 or ts[0] < 0:
        raise InvalidArgument("need at least two sample points in [0, tau]")
    span = ts[-1] - ts[0]
    if span <= 0:
        raise InvalidArgument("sample points must span a positive interval")
    return float(np.trapezoid(bs, ts) / span)


def ibs_grid(durations, events, tau: float, n_points: int = 100) -> np.ndarray:
    """Evaluation grid: equally spaced from the first event time to tau."""
    t = np.asarray(durations, dtype=np.float64)
    e = np.asarray(events).astype(bool)
    start = float(t[e].min()) if e.any() else float(t.min())
    if start >= tau:
        start = 0.0
    return np.linspace(start, tau, n_points)


def follow_up_percentiles(durations, events=None, qs: Sequence[float] = (0.25, 0.5, 0.75)) -> np.ndarray:
    """Linear-interpolation (type 7) quantiles of observed follow-up times."""
    t = np.asarray(durations, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise InvalidArgument("empty input")
    return np.quantile(t, list(qs), method="linear")


@dataclass
class EvalReport:
    c_index_integrated: float
    c_index_at: dict
    brier_at: dict
    ibs: float
    horizons: list
    n_pairs_used: int
    seed: int = 0
    config_fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    FORMAT_VERSION = 1

    def to_text(self) -> str:
        lines = [f"format_version = {self.FORMAT_VERSION}",
                 f"c_index_integrated = {self.c_index_integrated!r}",
                 f"ibs = {self.ibs!r}",
                 f"n_pairs_used = {self.n_pairs_used}",
                 f"seed = {self.seed}",
                 f"config_fingerprint = {self.config_fingerprint}",
                 "horizons = " + ",".join(repr(float(h)) for h in self.horizons)]
        for label, value in self.c_index_at.items():
            lines.append(f"c_index_at.{label} = {value!r}")
        for label, value in self.brier_at.items():
            lines.append(f"brier_at.{label} = {value!r}")
        for key, value in self.extra.items():
            lines.append(f"extra.{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                kv[key.strip()] = value.strip()
        if int(kv.get("format_version", -1)) != cls.FORMAT_VERSION:
            raise InvalidArgument(f"unsupported report format {kv.get('format_version')}")
        c_at = {k.split(".", 1)[1]: float(v) for k, v in kv.items() if k.startswith("c_index_at.")}
        b_at = {k.split(".", 1)[1]: float(v) for k, v in kv.items() if k.startswith("brier_at.")}
        extra = {k.split(".", 1)[1]: v for k, v in kv.items() if k.startswith("extra.")}
        return cls(float(kv["c_index_integrated"]), c_at, b_at, float(kv["ibs"]),
                   [float(h) for h in kv["horizons"].split(",")], int(kv["n_pairs_used"]),
                   int(kv["seed"]), kv["config_fingerprint"], extra)


def fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def evaluate(risks, durations, events, survival_fn, seed: int = 0, config: dict | None = None,
             qs: Sequence[float] = (0.25, 0.5, 0.75), censor_km: StepFunction | None = None,
             n_grid: int = 100) -> EvalReport:
    """Full metric suite on one evaluation set.

    ``survival_fn(t)`` returns the predicted S(t | x_i) for every subject.
    Horizons are the follow-up percentiles of the evaluation set; IBS runs
    to the last of them.
    """
    r, t, e = _aligned(risks, durations, events)
    if censor_km is None:
        censor_km = censoring_km(t, e)
    c_int, pairs = concordance(r, t, e)
    horizons = follow_up_percentiles(t, e, qs)
    labels = [f"{int(round(q * 100))}%" for q in qs]
    c_at, b_at = {}, {}
    for label, h in zip(labels, horizons):
        try:
            c_at[label] = c_index_truncated(r, t, e, h)
        except UndefinedMetric:
            c_at[label] = float("nan")
        b_at[label] = ipcw_brier(survival_fn(h), t, e, h, censor_km)
    tau = float(horizons[-1])
    grid = ibs_grid(t, e, tau, n_grid)
    curve = [ipcw_brier(survival_fn(g), t, e, g, censor_km) for g in grid]
    return EvalReport(c_int, c_at, b_at, integrated_brier(grid, curve, tau), [float(h) for h in horizons],
                      pairs, seed, fingerprint(config or {}))
