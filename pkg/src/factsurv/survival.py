"""Recurrent idle-event records, step functions, Kaplan-Meier and log-rank.

Ties between an event and a censoring at the same time keep the censored
subject in the risk set at that time.  The log-rank test treats all events as
independent samples, which ignores the within-driver correlation of
recurrent idle spells; p-values are therefore optimistic on real data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateTest, InvalidArgument


@dataclass(frozen=True)
class IdleEvent:
    driver_id: str
    seq_index: int
    covariates: np.ndarray
    duration: float
    event: int
    wall_clock_start: float

    def __post_init__(self):
        if not self.duration >= 0:
            raise InvalidArgument(f"duration must be >= 0, got {self.duration}")
        if self.event not in (0, 1):
            raise InvalidArgument(f"event must be 0 or 1, got {self.event}")
        if self.seq_index < 1:
            raise InvalidArgument(f"seq_index is 1-based, got {self.seq_index}")


def validate_driver_sequences(events: Iterable[IdleEvent]) -> None:
    """Check consecutive 1-based indices and nondecreasing start times per driver."""
    by_driver: dict[str, list[IdleEvent]] = {}
    for ev in events:
        by_driver.setdefault(ev.driver_id, []).append(ev)
    for driver, evs in by_driver.items():
        evs.sort(key=lambda e: e.seq_index)
        for k, ev in enumerate(evs, start=1):
            if ev.seq_index != k:
                raise InvalidArgument(f"driver {driver}: seq_index gap at {k}")
            if k > 1 and ev.wall_clock_start < evs[k - 2].wall_clock_start:
                raise InvalidArgument(f"driver {driver}: start time decreases at seq_index {k}")


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous piecewise-constant function of time."""

    knots: np.ndarray
    values: np.ndarray
    left_value: float = 1.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=np.float64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if knots.shape != values.shape:
            raise InvalidArgument(f"knots {knots.shape} and values {values.shape} differ in length")
        if knots.size > 1 and not np.all(np.diff(knots) > 0):
            raise InvalidArgument("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "left_value", float(self.left_value))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        ext = np.concatenate([[self.left_value], self.values])
        out = ext[idx + 1]
        return float(out) if out.ndim == 0 else out

    def left_limit(self, t):
        """Value approached from the left, f(t-)."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.knots, t, side="left") - 1
        ext = np.concatenate([[self.left_value], self.values])
        out = ext[idx + 1]
        return float(out) if out.ndim == 0 else out

    def map(self, fn) -> "StepFunction":
        return StepFunction(self.knots, fn(self.values), fn(np.float64(self.left_value)))


def _check_pair(durations, events) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(durations, dtype=np.float64).reshape(-1)
    e = np.asarray(events).reshape(-1)
    if d.size == 0:
        raise InvalidArgument("empty input")
    if d.shape != e.shape:
        raise InvalidArgument(f"durations ({d.size}) and events ({e.size}) differ in length")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise InvalidArgument("durations must be finite and non-negative")
    if not np.all((e == 0) | (e == 1)):
        raise InvalidArgument("events must be 0/1")
    return d, e.astype(np.int64)


def event_table(durations, events) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct event times with their event counts and at-risk counts."""
    d, e = _check_pair(durations, events)
    times, inverse = np.unique(d, return_inverse=True)
    n_events = np.bincount(inverse, weights=e, minlength=times.size)
    n_total = np.bincount(inverse, minlength=times.size)
    at_risk = d.size - np.concatenate([[0], np.cumsum(n_total)[:-1]])
    has_event = n_events > 0
    return times[has_event], n_events[has_event], at_risk[has_event].astype(np.float64)


def kaplan_meier(durations, events) -> StepFunction:
    """Product-limit survival estimate, held flat beyond the last observation."""
    times, d, n = event_table(durations, events)
    return StepFunction(times, np.cumprod(1.0 - d / n), 1.0)


# -- chi-square tail --------------------------------------------------------

def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x) by power series; converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(1000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a: float, x: float) -> float:
    # upper regularized Q(a, x) by modified Lentz continued fraction, x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    dd = 1.0 / b
    h = dd
    for i in range(1, 1000):
        an = -i * (i - a)
        b += 2.0
        dd = an * dd + b
        dd = tiny if abs(dd) < tiny else dd
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        dd = 1.0 / dd
        delta = dd * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0:
        raise InvalidArgument(f"gamma_q needs a > 0, got {a}")
    if x < 0:
        raise InvalidArgument(f"gamma_q needs x >= 0, got {x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return _gamma_cont_frac(a, x)


def chi2_sf(stat: float, df: int = 1) -> float:
    return gamma_q(df / 2.0, stat / 2.0)


# -- log-rank ---------------------------------------------------------------

def logrank_test(durations_a, events_a, durations_b, events_b) -> tuple[float, float]:
    """Two-sample log-rank test; returns (chi2, p_value) with 1 df."""
    da, ea = _check_pair(durations_a, events_a)
    db, eb = _check_pair(durations_b, events_b)
    d = np.concatenate([da, db])
    e = np.concatenate([ea, eb])
    in_a = np.concatenate([np.ones(da.size, bool), np.zeros(db.size, bool)])
    if e.sum() == 0:
        raise DegenerateTest("log-rank test needs at least one event")

    times = np.unique(d[e == 1])
    # counts at risk: number with duration >= t, computed by sorted search
    sa, sb = np.sort(da), np.sort(db)
    n_a = sa.size - np.searchsorted(sa, times, side="left")
    n_b = sb.size - np.searchsorted(sb, times, side="left")
    idx = np.searchsorted(times, d)
    ev_a = np.bincount(idx[(e == 1) & in_a], minlength=times.size)
    ev_b = np.bincount(idx[(e == 1) & ~in_a], minlength=times.size)
    n = (n_a + n_b).astype(np.float64)
    dt = (ev_a + ev_b).astype(np.float64)
    expected = dt * n_a / n
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n > 1, dt * (n_a / n) * (1.0 - n_a / n) * (n - dt) / (n - 1.0), 0.0)
    total_var = var.sum()
    if total_var <= 0:
        raise DegenerateTest("log-rank variance is zero")
    diff = (ev_a - expected).sum()
    chi2 = float(diff * diff / total_var)
    return chi2, chi2_sf(chi2, 1)


# -- stratification ---------------------------------------------------------

TIME_OF_DAY = ("Morning (5–11am)", "Afternoon (11–5pm)", "Evening (5–9pm)", "Night (9pm–5am)")


def time_of_day_label(hour: float) -> str:
    if 5 <= hour < 11:
        return TIME_OF_DAY[0]
    if 11 <= hour < 17:
        return TIME_OF_DAY[1]
    if 17 <= hour < 21:
        return TIME_OF_DAY[2]
    return TIME_OF_DAY[3]


def _bin(x: float, edges: Sequence[float], labels: Sequence[str], closed_first: bool = False) -> str:
    # intervals [edge_k, edge_k+1); with closed_first the first bin is (-inf, edges[0]]
    if closed_first and x <= edges[0]:
        return labels[0]
    for edge, label in zip(edges, labels):
        if x < edge:
            return label
    return labels[-1]


@dataclass(frozen=True)
class Stratification:
    name: str
    covariate: str | None
    labels: tuple[str, ...]
    assign: object = field(repr=False, compare=False)


def _utc(ts: float) -> datetime:
    return datetime.fromtimestamp(ts, tz=timezone.utc)


NAMED_RULES = {
    "time_of_day": Stratification(
        "time_of_day", None, TIME_OF_DAY,
        lambda ev, x: time_of_day_label(_utc(ev.wall_clock_start).hour)),
    "day_of_week": Stratification(
        "day_of_week", None, ("Non–Sunday", "Sunday"),
        lambda ev, x: "Sunday" if _utc(ev.wall_clock_start).weekday() == 6 else "Non–Sunday"),
    "fare": Stratification(
        "fare", "shift_earnings", ("≤0", "0–70", "≥70"),
        lambda ev, x: _bin(x, [0.0, 70.0], ["≤0", "0–70", "≥70"], closed_first=True)),
    "requests": Stratification(
        "requests", "shift_orders", ("<1", "1–6", "≥6"),
        lambda ev, x: _bin(x, [1.0, 6.0], ["<1", "1–6", "≥6"])),
    "dist_downtown": Stratification(
        "dist_downtown", "distance_downtown", ("<3km", "≥3km"),
        lambda ev, x: "<3km" if x < 3.0 else "≥3km"),
    "dist_airport": Stratification(
        "dist_airport", "distance_airport", ("<6km", "≥6km"),
        lambda ev, x: "<6km" if x < 6.0 else "≥6km"),
}


def parse_rule(rule: str) -> Stratification:
    """A named rule, or ``threshold:<covariate>:<value>`` for a two-way split."""
    if rule in NAMED_RULES:
        return NAMED_RULES[rule]
    if rule.startswith("threshold:"):
        parts = rule.split(":")
        if len(parts) != 3:
            raise InvalidArgument(f"threshold rule must be threshold:<covariate>:<value>, got {rule!r}")
        _, cov, raw = parts
        try:
            cut = float(raw)
        except ValueError:
            raise InvalidArgument(f"threshold value {raw!r} is not a number") from None
        lo, hi = f"<{raw}", f"≥{raw}"
        return Stratification(rule, cov, (lo, hi), lambda ev, x: lo if x < cut else hi)
    raise InvalidArgument(f"unknown stratification rule {rule!r}")


def stratify(events: Sequence[IdleEvent], rule: str,
             feature_names: Sequence[str] | None = None) -> dict[str, list[IdleEvent]]:
    """Partition events into labelled groups.

    Covariate-based rules look the named covariate up in each event's
    covariate vector via ``feature_names``; those values must be raw
    (unstandardized) for the fixed fare, request and distance thresholds to make sense.
    """
    strat = parse_rule(rule)
    col = None
    if strat.covariate is not None:
        names = list(feature_names or [])
        if strat.covariate not in names:
            raise InvalidArgument(f"covariate {strat.covariate!r} not among feature names")
        col = names.index(strat.covariate)
    groups: dict[str, list[IdleEvent]] = {label: [] for label in strat.labels}
    for ev in events:
        x = float(ev.covariates[col]) if col is not None else math.nan
        groups[strat.assign(ev, x)].append(ev)
    return groups
