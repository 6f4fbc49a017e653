"""From idle-event records to standardized, windowed training samples.

Window vocabulary: a lookback ``h`` counts historical events; the sequence
length is ``L = h + 1`` because the target event sits in the last slot with
its outcome pair zeroed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument, MissingFile, OrderingError, RowError, SchemaError
from .survival import IdleEvent

log = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S"


@dataclass(frozen=True)
class RawRecord:
    timestamp: float
    start_longitude: float
    start_latitude: float
    distance_downtown: float
    distance_airport: float
    shift_earnings: float
    shift_orders: float
    shift_trip_distance: float
    shift_idle_distance: float
    shift_trip_duration: float
    shift_idle_duration: float
    temperature: float
    precipitation: float
    snowfall: float
    snow_depth: float
    driver_id: str
    idle_duration: float
    outcome: str

    @property
    def event(self) -> int:
        # log-off ends the spell naturally; a trip assignment censors it
        return 1 if self.outcome == "logoff" else 0


CSV_COLUMNS = [f.name for f in fields(RawRecord)]
_FLOAT_COLUMNS = [c for c in CSV_COLUMNS if c not in ("timestamp", "driver_id", "outcome")]

FEATURE_GROUPS = {
    "temporal": ["hour_sine", "hour_cosine", "day_sine", "day_cosine", "month"],
    "spatial": ["start_longitude", "start_latitude", "distance_downtown", "distance_airport"],
    "workshift": ["shift_earnings", "shift_orders", "shift_trip_distance", "shift_idle_distance",
                  "shift_trip_duration", "shift_idle_duration"],
    "weather": ["temperature", "precipitation", "snowfall", "snow_depth"],
}
FEATURE_NAMES = [name for group in FEATURE_GROUPS.values() for name in group]
CYCLICAL = {"hour_sine", "hour_cosine", "day_sine", "day_cosine"}


def format_timestamp(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(text: str) -> float:
    dt = datetime.strptime(text, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)
    return dt.timestamp()


# -- CSV -------------------------------------------------------------------

def write_csv(records: Iterable[RawRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            row = []
            for name in CSV_COLUMNS:
                value = getattr(rec, name)
                if name == "timestamp":
                    row.append(format_timestamp(value))
                elif isinstance(value, float):
                    row.append(repr(value))
                else:
                    row.append(value)
            writer.writerow(row)


def ingest_csv(path) -> list[RawRecord]:
    """Parse and validate an idle-event CSV.

    Rows of one driver must appear in nondecreasing timestamp order; the
    result is grouped by driver (first-appearance order), time-sorted.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file: missing header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"missing column(s): {', '.join(missing)}")
        pos = {name: header.index(name) for name in CSV_COLUMNS}
        by_driver: dict[str, list[RawRecord]] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RowError(f"line {line_no}: expected {len(header)} cells, got {len(row)}", line_no)
            values = {}
            for name in CSV_COLUMNS:
                cell = row[pos[name]].strip()
                try:
                    if name == "timestamp":
                        values[name] = parse_timestamp(cell)
                    elif name in _FLOAT_COLUMNS:
                        values[name] = float(cell)
                        if not math.isfinite(values[name]):
                            raise ValueError
                    else:
                        values[name] = cell
                except ValueError:
                    raise RowError(f"line {line_no}: cannot parse {name}={cell!r}", line_no) from None
            if values["outcome"] not in ("logoff", "trip"):
                raise RowError(f"line {line_no}: outcome must be logoff or trip, got {values['outcome']!r}",
                               line_no)
            if values["idle_duration"] < 0:
                raise RowError(f"line {line_no}: negative idle_duration", line_no)
            rec = RawRecord(**values)
            history = by_driver.setdefault(rec.driver_id, [])
            if history and rec.timestamp < history[-1].timestamp:
                raise OrderingError(f"line {line_no}: timestamps go backwards for driver {rec.driver_id}")
            history.append(rec)
    return [rec for recs in by_driver.values() for rec in recs]


# -- features --------------------------------------------------------------

def cyclical_encode(v, period: float):
    if not period > 0:
        raise InvalidArgument(f"period must be > 0, got {period}")
    angle = 2.0 * np.pi * np.asarray(v, dtype=np.float64) / period
    return np.sin(angle), np.cos(angle)


def record_features(rec: RawRecord) -> np.ndarray:
    """Raw covariate vector in FEATURE_NAMES order."""
    dt = datetime.fromtimestamp(rec.timestamp, tz=timezone.utc)
    hour = dt.hour + dt.minute / 60.0 + dt.second / 3600.0
    hs, hc = cyclical_encode(hour, 24.0)
    ds, dc = cyclical_encode(dt.weekday(), 7.0)
    return np.array([
        hs, hc, ds, dc, float(dt.month),
        rec.start_longitude, rec.start_latitude, rec.distance_downtown, rec.distance_airport,
        rec.shift_earnings, rec.shift_orders, rec.shift_trip_distance, rec.shift_idle_distance,
        rec.shift_trip_duration, rec.shift_idle_duration,
        rec.temperature, rec.precipitation, rec.snowfall, rec.snow_depth,
    ], dtype=np.float64)


def to_idle_events(records: Sequence[RawRecord]) -> list[IdleEvent]:
    """Raw (unstandardized) idle events with per-driver 1-based indices."""
    counters: dict[str, int] = {}
    out = []
    for rec in records:
        k = counters.get(rec.driver_id, 0) + 1
        counters[rec.driver_id] = k
        out.append(IdleEvent(rec.driver_id, k, record_features(rec), rec.idle_duration,
                             rec.event, rec.timestamp))
    return out


# -- windows ---------------------------------------------------------------

@dataclass
class WindowSample:
    driver_id: str
    sequence: np.ndarray
    label: tuple
    target_wall_clock: float
    pad_mask: np.ndarray


@dataclass
class WindowSet:
    """Columnar store of M windows, each of length L over ``p + 2`` inputs.

    The last two input columns are the outcome pair (duration, indicator);
    the target row's pair is always (0, 0).  ``pad_mask`` is True on
    left-padding rows.
    """

    features: np.ndarray
    pad_mask: np.ndarray
    durations: np.ndarray
    events: np.ndarray
    driver_ids: np.ndarray
    target_wall_clock: np.ndarray
    feature_names: list

    FORMAT_VERSION = 1

    def __len__(self) -> int:
        return self.durations.size

    @property
    def seq_len(self) -> int:
        return self.features.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.features.shape[2] - 2

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(str(self.driver_ids[i]), self.features[i],
                            (float(self.durations[i]), int(self.events[i])),
                            float(self.target_wall_clock[i]), self.pad_mask[i])

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.features[idx], self.pad_mask[idx], self.durations[idx], self.events[idx],
                         self.driver_ids[idx], self.target_wall_clock[idx], list(self.feature_names))

    def target_covariates(self) -> np.ndarray:
        return self.features[:, -1, :-2]

    def flat_features(self) -> np.ndarray:
        """Whole window flattened per sample, target outcome slots dropped."""
        m = len(self)
        hist = self.features[:, :-1, :].reshape(m, -1)
        return np.concatenate([hist, self.target_covariates()], axis=1)

    def truncate(self, lookback: int) -> "WindowSet":
        """Keep only the last ``lookback`` historical rows."""
        if lookback < 0 or lookback + 1 > self.seq_len:
            raise InvalidArgument(f"cannot truncate L={self.seq_len} windows to lookback {lookback}")
        start = self.seq_len - (lookback + 1)
        return WindowSet(self.features[:, start:].copy(), self.pad_mask[:, start:].copy(),
                         self.durations, self.events, self.driver_ids, self.target_wall_clock,
                         list(self.feature_names))

    def drop_groups(self, groups: Iterable[str]) -> "WindowSet":
        drop = set()
        for g in groups:
            if g not in FEATURE_GROUPS:
                raise InvalidArgument(f"unknown feature group {g!r}")
            drop.update(FEATURE_GROUPS[g])
        keep = [i for i, name in enumerate(self.feature_names) if name not in drop]
        if not keep:
            raise InvalidArgument("no covariates left after dropping feature groups")
        p = len(self.feature_names)
        cols = keep + [p, p + 1]
        return WindowSet(self.features[:, :, cols].copy(), self.pad_mask, self.durations, self.events,
                         self.driver_ids, self.target_wall_clock, [self.feature_names[i] for i in keep])

    @classmethod
    def concat(cls, parts: Sequence["WindowSet"]) -> "WindowSet":
        return cls(np.concatenate([w.features for w in parts]), np.concatenate([w.pad_mask for w in parts]),
                   np.concatenate([w.durations for w in parts]), np.concatenate([w.events for w in parts]),
                   np.concatenate([w.driver_ids for w in parts]),
                   np.concatenate([w.target_wall_clock for w in parts]), list(parts[0].feature_names))

    def save(self, path) -> None:
        np.savez(path, format_version=np.array(self.FORMAT_VERSION),
                 features=self.features.astype("<f8"), pad_mask=self.pad_mask,
                 durations=self.durations.astype("<f8"), events=self.events.astype("<i8"),
                 driver_ids=self.driver_ids.astype(str), target_wall_clock=self.target_wall_clock.astype("<f8"),
                 feature_names=np.array(self.feature_names, dtype=str))

    @classmethod
    def load(cls, path) -> "WindowSet":
        path = Path(path)
        if not path.exists():
            raise MissingFile(f"no such file: {path}")
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != cls.FORMAT_VERSION:
                raise SchemaError(f"{path}: window cache format {version}, expected {cls.FORMAT_VERSION}")
            return cls(z["features"], z["pad_mask"], z["durations"], z["events"],
                       z["driver_ids"].astype(object), z["target_wall_clock"], [str(s) for s in z["feature_names"]])


def build_windows(events: Sequence[IdleEvent], seq_len: int, pad: bool = True,
                  feature_names: Sequence[str] = FEATURE_NAMES) -> WindowSet:
    """Sliding windows over one driver's time-ordered events.

    Without padding there are ``N - L + 1`` windows; with left padding every
    event is a target, giving ``N`` windows.
    """
    if seq_len < 1:
        raise InvalidArgument(f"sequence length must be >= 1, got {seq_len}")
    p = len(feature_names)
    n = len(events)
    n_out = n if pad else max(n - seq_len + 1, 0)
    if n_out == 0:
        return WindowSet(np.zeros((0, seq_len, p + 2)), np.zeros((0, seq_len), bool), np.zeros(0),
                         np.zeros(0, np.int64), np.zeros(0, object), np.zeros(0), list(feature_names))
    rows = np.zeros((n, p + 2))
    for k, ev in enumerate(events):
        rows[k, :p] = ev.covariates
        rows[k, p] = ev.duration
        rows[k, p + 1] = ev.event
    real = np.ones(n, dtype=bool)
    if pad:
        rows = np.concatenate([np.zeros((seq_len - 1, p + 2)), rows])
        real = np.concatenate([np.zeros(seq_len - 1, bool), real])
    view = np.lib.stride_tricks.sliding_window_view(rows, seq_len, axis=0)  # (n_out, p+2, L)
    feats = np.array(view.transpose(0, 2, 1), order="C")
    feats[:, -1, p:] = 0.0
    pad_mask = ~np.lib.stride_tricks.sliding_window_view(real, seq_len)
    targets = events[n - n_out:]
    return WindowSet(feats, np.ascontiguousarray(pad_mask),
                     np.array([e.duration for e in targets], dtype=np.float64),
                     np.array([e.event for e in targets], dtype=np.int64),
                     np.array([e.driver_id for e in targets], dtype=object),
                     np.array([e.wall_clock_start for e in targets], dtype=np.float64),
                     list(feature_names))


def windows_from_records(records: Sequence[RawRecord], lookback: int, pad: bool = True) -> WindowSet:
    events = to_idle_events(records)
    by_driver: dict[str, list[IdleEvent]] = {}
    for ev in events:
        by_driver.setdefault(ev.driver_id, []).append(ev)
    parts = [build_windows(evs, lookback + 1, pad) for evs in by_driver.values()]
    return WindowSet.concat(parts)


def chronological_split(windows: WindowSet, train: float = 0.70, val: float = 0.15,
                        test: float = 0.15) -> tuple[WindowSet, WindowSet, WindowSet]:
    """Sort by target time, then floor/floor/remainder split."""
    if abs(train + val + test - 1.0) > 1e-9 or min(train, val, test) < 0:
        raise InvalidArgument(f"split fractions must be non-negative and sum to 1, got {train}, {val}, {test}")
    m = len(windows)
    if m == 0:
        raise InvalidArgument("no windows to split")
    # driver id and duration break timestamp ties so input order never matters
    order = np.lexsort((windows.durations, windows.driver_ids.astype(str), windows.target_wall_clock))
    n_train = int(math.floor(train * m))
    n_val = int(math.floor(val * m))
    return (windows.subset(order[:n_train]), windows.subset(order[n_train:n_train + n_val]),
            windows.subset(order[n_train + n_val:]))


# -- standardization -------------------------------------------------------

@dataclass
class Scaler:
    """Per-column mean/std fit on training data only (population std)."""

    names: list
    mean: np.ndarray
    std: np.ndarray
    duration_mean: float = 0.0
    duration_std: float = 1.0

    @classmethod
    def fit(cls, matrix: np.ndarray, names: Sequence[str], durations=None) -> "Scaler":
        x = np.asarray(matrix, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise InvalidArgument("empty training set")
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        for i, name in enumerate(names):
            if name in CYCLICAL:
                mean[i], std[i] = 0.0, 1.0
            elif std[i] == 0:
                log.warning("feature %s is constant in training data; leaving it unscaled", name)
                std[i] = 1.0
        dmean, dstd = 0.0, 1.0
        if durations is not None:
            d = np.asarray(durations, dtype=np.float64)
            dmean, dstd = float(d.mean()), float(d.std()) or 1.0
        return cls(list(names), mean, std, dmean, dstd)

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"names": self.names, "mean": self.mean.tolist(), "std": self.std.tolist(),
                "duration_mean": self.duration_mean, "duration_std": self.duration_std}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(list(d["names"]), np.array(d["mean"]), np.array(d["std"]),
                   float(d["duration_mean"]), float(d["duration_std"]))


def fit_scaler(train: WindowSet) -> Scaler:
    """Fit on the target rows of the training windows."""
    if len(train) == 0:
        raise InvalidArgument("empty training set")
    return Scaler.fit(train.target_covariates(), train.feature_names, train.durations)


def apply_scaler(scaler: Scaler, windows: WindowSet) -> WindowSet:
    if list(scaler.names) != list(windows.feature_names):
        raise SchemaError("scaler was fit on different feature columns")
    p = windows.n_covariates
    feats = windows.features.copy()
    real = ~windows.pad_mask
    feats[:, :, :p] = np.where(real[..., None], scaler.transform(feats[:, :, :p]), 0.0)
    hist = real.copy()
    hist[:, -1] = False
    feats[:, :, p] = np.where(hist, (feats[:, :, p] - scaler.duration_mean) / scaler.duration_std, 0.0)
    return WindowSet(feats, windows.pad_mask, windows.durations, windows.events, windows.driver_ids,
                     windows.target_wall_clock, list(windows.feature_names))

