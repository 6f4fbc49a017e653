"""Synthetic ride-hailing idle-event generator with known ground truth.

Each driver alternates idle spells and trips inside daily shifts.  During an
idle spell two clocks race:

* log-off, with Weibull proportional hazard
  ``h0(t) * exp(beta . x + history_coef * H + g_i)``;
* trip arrival, exponential with rate ``trip_rate`` (censors the spell).

``x`` are Table-I style covariates standardized with fixed reference
constants (``REFERENCE``), ``g_i ~ Normal(0, frailty_sd^2)`` is the driver's
log-frailty and ``H`` is the standardized mean of the driver's previous
``history_len`` idle durations.  ``H`` carries across shifts, so it is not a
function of the current-shift cumulants a snapshot model sees.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from .autodiff import make_rng
from .data import RawRecord, record_features, FEATURE_NAMES
from .errors import InvalidArgument

DOWNTOWN = (43.6532, -79.3832)
AIRPORT = (43.6777, -79.6248)
KM_PER_DEG_LAT = 111.0

# (mean, sd) used to put raw covariates on a unit scale inside the hazard
REFERENCE = {
    "hour_sine": (0.0, 1.0), "hour_cosine": (0.0, 1.0),
    "day_sine": (0.0, 1.0), "day_cosine": (0.0, 1.0), "month": (2.0, 1.0),
    "start_longitude": (-79.40, 0.08), "start_latitude": (43.68, 0.05),
    "distance_downtown": (7.0, 5.0), "distance_airport": (18.0, 6.0),
    "shift_earnings": (40.0, 40.0), "shift_orders": (2.0, 2.0),
    "shift_trip_distance": (15.0, 15.0), "shift_idle_distance": (3.0, 3.0),
    "shift_trip_duration": (40.0, 40.0), "shift_idle_duration": (25.0, 25.0),
    "temperature": (-3.0, 6.0), "precipitation": (0.3, 0.8),
    "snowfall": (0.2, 0.6), "snow_depth": (0.05, 0.05),
}

DEFAULT_BETA = {
    "hour_cosine": 0.35,
    "distance_downtown": 0.30,
    "shift_orders": -0.25,
    "shift_trip_duration": 0.35,
    "shift_idle_duration": 0.20,
    "temperature": -0.15,
    "precipitation": 0.15,
}


@dataclass
class SynthConfig:
    n_drivers: int = 500
    horizon_days: int = 20
    frailty_sd: float = 0.7
    beta: dict = field(default_factory=lambda: dict(DEFAULT_BETA))
    history_coef: float = 0.5
    history_len: int = 5
    trip_rate: float = 0.08
    weibull_shape: float = 1.3
    weibull_scale: float = 25.0
    work_prob: float = 0.5
    start_date: str = "2020-01-06"
    seed: int = 0

    def validate(self) -> None:
        if self.n_drivers < 1:
            raise InvalidArgument(f"n_drivers must be >= 1, got {self.n_drivers}")
        if self.horizon_days < 1:
            raise InvalidArgument(f"horizon_days must be >= 1, got {self.horizon_days}")
        for name in ("trip_rate", "weibull_shape", "weibull_scale"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be > 0, got {getattr(self, name)}")
        if self.frailty_sd < 0:
            raise InvalidArgument("frailty_sd must be >= 0")
        if not 0 < self.work_prob <= 1:
            raise InvalidArgument("work_prob must be in (0, 1]")
        if self.history_len < 1:
            raise InvalidArgument("history_len must be >= 1")
        unknown = set(self.beta) - set(FEATURE_NAMES)
        if unknown:
            raise InvalidArgument(f"beta names unknown covariates: {sorted(unknown)}")


@dataclass
class GroundTruth:
    config: dict
    frailty: dict
    reference: dict = field(default_factory=lambda: {k: list(v) for k, v in REFERENCE.items()})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        return cls(d["config"], d["frailty"], d.get("reference", {}))


def _weather(cfg: SynthConfig, start: float) -> dict:
    """Hourly city-wide weather for the whole horizon."""
    rng = make_rng(cfg.seed, 1_000_003)
    hours = cfg.horizon_days * 24 + 48
    daily = -3.0 + rng.normal(0.0, 5.0, cfg.horizon_days + 2)
    t_hour = np.arange(hours)
    temp = np.repeat(daily, 24)[:hours] + 3.0 * np.sin(2 * np.pi * ((t_hour % 24) - 9) / 24)
    wet = rng.random(hours) < 0.12
    amount = np.where(wet, rng.exponential(1.2, hours), 0.0)
    snowfall = np.where(temp < 0, amount, 0.0)
    precipitation = np.where(temp >= 0, amount, 0.0)
    depth = np.zeros(hours)
    for h in range(1, hours):
        melt = 0.004 if temp[h] > 0 else 0.0005
        depth[h] = max(0.0, depth[h - 1] + snowfall[h] * 0.01 - melt)
    return {"temperature": np.round(temp, 2), "precipitation": np.round(precipitation, 2),
            "snowfall": np.round(snowfall, 2), "snow_depth": np.round(depth, 4), "start": start}


def _location(rng) -> tuple[float, float]:
    # mixture: dense downtown core, airport cluster, wider city
    u = rng.random()
    if u < 0.45:
        r = rng.exponential(2.0)
        centre = DOWNTOWN
    elif u < 0.55:
        r = rng.exponential(1.5)
        centre = AIRPORT
    else:
        r = rng.uniform(2.0, 18.0)
        centre = DOWNTOWN
    theta = rng.uniform(0, 2 * np.pi)
    lat = centre[0] + r * math.sin(theta) / KM_PER_DEG_LAT
    lon = centre[1] + r * math.cos(theta) / (KM_PER_DEG_LAT * math.cos(math.radians(centre[0])))
    return round(lat, 6), round(lon, 6)


def _distance(lat: float, lon: float, ref: tuple[float, float]) -> float:
    dy = (lat - ref[0]) * KM_PER_DEG_LAT
    dx = (lon - ref[1]) * KM_PER_DEG_LAT * math.cos(math.radians(ref[0]))
    return math.hypot(dx, dy)


def synth_generate(cfg: SynthConfig) -> tuple[list[RawRecord], GroundTruth]:
    cfg.validate()
    start = datetime.strptime(cfg.start_date, "%Y-%m-%d").replace(tzinfo=timezone.utc).timestamp()
    weather = _weather(cfg, start)
    beta_idx = [(FEATURE_NAMES.index(k), v) for k, v in sorted(cfg.beta.items())]
    units = [(n,) + REFERENCE[n] for n in FEATURE_NAMES]
    mus = np.array([u[1] for u in units])
    sds = np.array([u[2] for u in units])

    records: list[RawRecord] = []
    frailty = {}
    for i in range(cfg.n_drivers):
        rng = make_rng(cfg.seed, i)
        driver = f"D{i + 1:04d}"
        g = float(rng.normal(0.0, cfg.frailty_sd)) if cfg.frailty_sd > 0 else 0.0
        frailty[driver] = g
        pref_hour = float(rng.choice([7.0, 11.0, 16.0, 20.0], p=[0.3, 0.25, 0.3, 0.15]))
        recent: list[float] = []
        for day in range(cfg.horizon_days):
            if rng.random() >= cfg.work_prob:
                continue
            clock = start + day * 86400 + 3600 * (pref_hour + rng.normal(0.0, 1.5))
            clock = float(round(clock))
            lat, lon = _location(rng)
            earn = orders = trip_km = idle_km = trip_min = idle_min = 0.0
            while True:
                hour_idx = int((clock - start) // 3600)
                hour_idx = min(max(hour_idx, 0), weather["temperature"].size - 1)
                rec_stub = RawRecord(
                    clock, lon, lat, round(_distance(lat, lon, DOWNTOWN), 4),
                    round(_distance(lat, lon, AIRPORT), 4), round(earn, 2), orders,
                    round(trip_km, 3), round(idle_km, 3), round(trip_min, 3), round(idle_min, 3),
                    float(weather["temperature"][hour_idx]), float(weather["precipitation"][hour_idx]),
                    float(weather["snowfall"][hour_idx]), float(weather["snow_depth"][hour_idx]),
                    driver, 0.0, "trip")
                x = (record_features(rec_stub) - mus) / sds
                eta = sum(coef * x[j] for j, coef in beta_idx) + g
                if recent:
                    hist = (np.mean(recent[-cfg.history_len:]) - 8.0) / 6.0
                    eta += cfg.history_coef * hist
                e1 = rng.exponential()
                t_off = cfg.weibull_scale * (e1 / math.exp(eta)) ** (1.0 / cfg.weibull_shape)
                t_trip = rng.exponential(1.0 / cfg.trip_rate)
                idle = round(min(t_off, t_trip), 3)
                logoff = t_off < t_trip
                records.append(RawRecord(**{**rec_stub.__dict__, "idle_duration": idle,
                                            "outcome": "logoff" if logoff else "trip"}))
                recent.append(idle)
                if logoff:
                    break
                idle_min += idle
                idle_km += round(idle * rng.uniform(0.05, 0.3), 3)
                dur = rng.gamma(2.0, 8.0)
                km = dur * rng.uniform(0.3, 0.7)
                trip_min += dur
                trip_km += km
                orders += 1.0
                earn += 3.5 + 1.2 * km + 0.3 * dur
                clock = float(round(clock + 60.0 * (idle + dur)))
                lat, lon = _location(rng)
    truth = GroundTruth(config=asdict(cfg), frailty=frailty)
    return records, truth


def weibull_survival(t, shape: float, scale: float):
    """Closed-form log-off survival when covariates, frailty and history are off."""
    return np.exp(-(np.asarray(t, dtype=np.float64) / scale) ** shape)
