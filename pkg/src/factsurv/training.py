"""Training loop, model evaluation, grid search, attention and ablations."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .coxloss import RiskSetBatch, cox_nll
from .coxph import breslow_baseline, fit_coxph_arrays, survival_at
from .data import (FEATURE_GROUPS, Scaler, WindowSet, apply_scaler, chronological_split, fit_scaler,
                   windows_from_records)
from .errors import FactError, InvalidArgument, MissingFile, SchemaError, TrainingFailure
from .metrics import EvalReport, c_index, censoring_km, evaluate, fingerprint
from .models import ATTENTION_KINDS, MODEL_ALIASES, FactConfig, RiskModel, build_model

log = logging.getLogger(__name__)

ALL_GROUPS = tuple(FEATURE_GROUPS)


@dataclass
class TrainConfig:
    model: str = "fact"
    fact: FactConfig = field(default_factory=FactConfig)
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    patience: float = 5
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    feature_groups: list = field(default_factory=lambda: list(ALL_GROUPS))
    lookback: int = 20
    coxph_windowed: bool = False

    def validate(self) -> None:
        if not self.patience >= 1:
            raise InvalidArgument(f"patience must be >= 1, got {self.patience}")
        if not self.seeds:
            raise InvalidArgument("seeds must be nonempty")
        if self.batch_size < 1 or self.max_epochs < 0 or self.lr < 0:
            raise InvalidArgument("batch_size >= 1, max_epochs >= 0 and lr >= 0 required")
        bad = set(self.feature_groups) - set(ALL_GROUPS)
        if bad:
            raise InvalidArgument(f"unknown feature groups {sorted(bad)}")
        if not self.feature_groups:
            raise InvalidArgument("at least one feature group must stay enabled")
        if self.lookback < 0:
            raise InvalidArgument("lookback must be >= 0")

    @property
    def kind(self) -> str:
        return MODEL_ALIASES.get(self.model, self.model)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    """Standardized chronological splits plus the scaler that produced them."""

    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: Scaler | None = None

    def view(self, lookback: int | None = None, feature_groups: Sequence[str] = ALL_GROUPS) -> "Dataset":
        drop = [g for g in ALL_GROUPS if g not in feature_groups]
        parts = []
        for ws in (self.train, self.val, self.test):
            if lookback is not None and lookback + 1 != ws.seq_len:
                ws = ws.truncate(lookback)
            if drop:
                ws = ws.drop_groups(drop)
            parts.append(ws)
        return Dataset(*parts, scaler=self.scaler)


@dataclass
class History:
    epochs: list = field(default_factory=list)

    def record(self, epoch: int, train_loss: float, val_c_index: float) -> None:
        self.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_c_index": val_c_index})

    @property
    def best_val(self) -> float:
        vals = [e["val_c_index"] for e in self.epochs]
        return max(vals) if vals else float("nan")

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_c_index"]
        lines += [f"{e['epoch']},{e['train_loss']!r},{e['val_c_index']!r}" for e in self.epochs]
        return "\n".join(lines) + "\n"


def _fact_config_for(cfg: TrainConfig, ws: WindowSet) -> FactConfig:
    return replace(cfg.fact, seq_len=ws.seq_len, input_dim=ws.n_covariates + 2)


def _safe_c_index(model: RiskModel, ws: WindowSet) -> float:
    try:
        return c_index(model.predict(ws), ws.durations, ws.events)
    except FactError:
        return float("nan")


def fit_classical(train: WindowSet, cfg: TrainConfig | None = None) -> RiskModel:
    """CoxPH by Newton-Raphson, wrapped as a linear risk model."""
    cfg = cfg or TrainConfig(model="coxph")
    X = train.flat_features() if cfg.coxph_windowed else train.target_covariates()
    fit = fit_coxph_arrays(X, train.durations, train.events)
    if not fit.converged:
        log.warning("CoxPH stopped after %d iterations without converging", fit.n_iterations)
    model = build_model("linear", _fact_config_for(cfg, train))
    model.params["beta"] = ad.Tensor(fit.beta[:, None].copy(), requires_grad=True, name="beta")
    model.fit_info = fit
    return model


def train(cfg: TrainConfig, train_ws: WindowSet, val_ws: WindowSet, seed: int,
          on_epoch: Callable[[int, float, float], None] | None = None) -> tuple[RiskModel, History]:
    """Minibatch Adam on the Cox loss with best-validation early stopping.

    Risk sets are formed inside each minibatch.  Batches without any
    uncensored event carry no gradient and are skipped.
    """
    cfg.validate()
    kind = cfg.kind
    drivers = sorted(set(map(str, train_ws.driver_ids)))
    model = build_model(kind, _fact_config_for(cfg, train_ws), drivers, seed=seed)
    params = model.parameters()
    state = ad.AdamState(params)
    rng = ad.make_rng(seed, 1)
    rows, _ = model.rows_for(train_ws.driver_ids)
    history = History()
    best_state = model.state()
    best_val = -math.inf
    stale = 0
    m = len(train_ws)
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(m)
        losses = []
        for step, start in enumerate(range(0, m, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            ev = train_ws.events[idx]
            if not ev.any():
                continue
            for p in params:
                p.grad = None
            risk = model.forward(train_ws.features[idx], train_ws.pad_mask[idx], rows[idx],
                                 training=True, rng=rng)
            loss = cox_nll(RiskSetBatch(risk, train_ws.durations[idx], ev)) * (1.0 / ev.sum())
            if not np.isfinite(loss.item()):
                raise TrainingFailure(f"non-finite loss at epoch {epoch}, step {step}", epoch, step)
            loss.backward()
            ad.adam_step(params, [p.grad for p in params], state, lr=cfg.lr)
            losses.append(loss.item())
        val_c = _safe_c_index(model, val_ws)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        history.record(epoch, train_loss, val_c)
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_c)
        log.debug("%s seed %d epoch %d loss %.5f val C %.4f", kind, seed, epoch, train_loss, val_c)
        if val_c > best_val:
            best_val, best_state, stale = val_c, model.state(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state(best_state)
    return model, history


def fit_model(cfg: TrainConfig, data: Dataset, seed: int) -> tuple[RiskModel, History]:
    if cfg.model == "coxph":
        model = fit_classical(data.train, cfg)
        history = History()
        history.record(0, float("nan"), _safe_c_index(model, data.val))
        return model, history
    return train(cfg, data.train, data.val, seed)


def evaluate_model(model: RiskModel, train_ws: WindowSet, eval_ws: WindowSet, seed: int = 0,
                   config: dict | None = None) -> EvalReport:
    """EvalReport on ``eval_ws``; survival curves use a Breslow baseline from training risks."""
    baseline = breslow_baseline(train_ws.durations, train_ws.events, model.predict(train_ws))
    risks = model.predict(eval_ws)
    report = evaluate(risks, eval_ws.durations, eval_ws.events,
                      lambda t: survival_at(baseline, risks, t), seed=seed, config=config,
                      censor_km=censoring_km(eval_ws.durations, eval_ws.events))
    return report


@dataclass
class SeedSummary:
    reports: list

    def values(self, getter) -> np.ndarray:
        return np.array([getter(r) for r in self.reports], dtype=np.float64)

    def mean_sd(self, getter) -> tuple[float, float]:
        v = self.values(getter)
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def run_seeds(cfg: TrainConfig, data: Dataset) -> tuple[SeedSummary, list[RiskModel]]:
    """Train and test once per seed; the spread is the sample sd over seeds."""
    view = data.view(cfg.lookback, cfg.feature_groups)
    reports, models = [], []
    for seed in cfg.seeds:
        model, _ = fit_model(cfg, view, seed)
        reports.append(evaluate_model(model, view.train, view.test, seed, cfg.to_dict()))
        models.append(model)
    return SeedSummary(reports), models


# -- grid search -----------------------------------------------------------

@dataclass
class GridSpec:
    n_heads: list = field(default_factory=lambda: [2, 4, 6])
    frailty_dim: list = field(default_factory=lambda: [2, 4, 6, 8])
    n_layers: list = field(default_factory=lambda: [1, 2, 3])
    hidden_dim: list = field(default_factory=lambda: [8, 16, 32, 64])

    def cells(self) -> list[dict]:
        combos = list(itertools.product(self.n_heads, self.frailty_dim, self.n_layers, self.hidden_dim))
        if not combos:
            raise InvalidArgument("grid is empty")
        return [dict(n_heads=m, frailty_dim=n, n_layers=l, hidden_dim=d) for m, n, l, d in combos]


@dataclass
class GridResult:
    cell: dict
    val_c_index: float
    status: str = "ok"
    error: str = ""


def grid_search(grid: GridSpec, base: TrainConfig, data: Dataset, seed: int | None = None) -> list[GridResult]:
    """Train every cell with one seed; rank by validation C-index.

    Ties go to the smaller (d, l, m, n).  Cells that fail, including
    configurations whose width is not divisible by the head count, are kept
    at the bottom with status ``failed``.
    """
    seed = base.seeds[0] if seed is None else seed
    view = data.view(base.lookback, base.feature_groups)
    results = []
    for cell in grid.cells():
        cfg = replace(base, fact=replace(base.fact, **cell))
        try:
            cfg.fact.validate()
            model, history = train(cfg, view.train, view.val, seed)
            results.append(GridResult(cell, history.best_val))
        except FactError as exc:
            results.append(GridResult(cell, float("nan"), "failed", f"{exc.category}: {exc}"))

    def key(res: GridResult):
        c = res.cell
        score = res.val_c_index if res.status == "ok" and np.isfinite(res.val_c_index) else -math.inf
        return (-score, c["hidden_dim"], c["n_layers"], c["n_heads"], c["frailty_dim"])

    return sorted(results, key=key)


# -- attention -------------------------------------------------------------

def attention_profile(model: RiskModel, windows: WindowSet, layer: int = -1,
                      batch_size: int = 2048) -> np.ndarray:
    """Mean attention of the target position over the L window slots.

    Averaged over heads and samples for one layer (final by default), then
    renormalized; padded slots receive no weight.
    """
    if model.kind not in ATTENTION_KINDS:
        raise InvalidArgument(f"{model.kind} model has no attention layers")
    rows, _ = model.rows_for(windows.driver_ids)
    total = np.zeros(windows.seq_len)
    with ad.no_grad():
        for s in range(0, len(windows), batch_size):
            sl = slice(s, s + batch_size)
            model.forward(windows.features[sl], windows.pad_mask[sl], rows[sl], keep_attention=True)
            att = model.last_attention[layer]
            row = att[:, :, -1, :].mean(axis=1)
            row = np.where(windows.pad_mask[sl], 0.0, row)
            total += row.sum(axis=0)
    model.last_attention = None
    return total / total.sum()


# -- ablation --------------------------------------------------------------

SCENARIO_KEYS = {
    "full": ("Full features", {"drop": [], "lookback": None}),
    "temporal": ("Temporal features", {"drop": ["temporal"], "lookback": None}),
    "spatial": ("Spatial features", {"drop": ["spatial"], "lookback": None}),
    "workshift": ("Workshift cumulative features", {"drop": ["workshift"], "lookback": None}),
    "weather": ("Weather features", {"drop": ["weather"], "lookback": None}),
    "no_history": ("No history", {"drop": [], "lookback": 0}),
}
ABLATION_SCENARIOS = dict(SCENARIO_KEYS.values())


@dataclass
class AblationCell:
    scenario: str
    with_embedding: bool
    c_index: float
    status: str = "ok"
    error: str = ""


def ablation_plan(base: TrainConfig, scenarios: dict | None = None) -> list[tuple[str, bool, TrainConfig]]:
    scenarios = ABLATION_SCENARIOS if scenarios is None else scenarios
    plan = []
    for name, spec in scenarios.items():
        groups = [g for g in base.feature_groups if g not in spec.get("drop", [])]
        if not groups:
            raise InvalidArgument(f"scenario {name!r} drops every feature group")
        lookback = base.lookback if spec.get("lookback") is None else spec["lookback"]
        for embed in (False, True):
            cfg = replace(base, model="fact" if embed else "transformer", feature_groups=groups,
                          lookback=lookback)
            plan.append((name, embed, cfg))
    return plan


def ablation_run(base: TrainConfig, data: Dataset, scenarios: dict | None = None) -> list[AblationCell]:
    """Mean test C-index per (scenario, embedding on/off) over the base seeds."""
    cells = []
    for name, embed, cfg in ablation_plan(base, scenarios):
        try:
            summary, _ = run_seeds(cfg, data)
            cells.append(AblationCell(name, embed, summary.mean_sd(lambda r: r.c_index_integrated)[0]))
        except FactError as exc:
            cells.append(AblationCell(name, embed, float("nan"), "failed", f"{exc.category}: {exc}"))
    return cells


def ablation_table(cells: Sequence[AblationCell]) -> str:
    rows = {}
    for c in cells:
        rows.setdefault(c.scenario, {})[c.with_embedding] = c
    lines = ["scenario,without_embedding,with_embedding"]
    for name, pair in rows.items():
        vals = [pair.get(flag) for flag in (False, True)]
        lines.append(name + "," + ",".join("" if v is None else repr(v.c_index) for v in vals))
    return "\n".join(lines) + "\n"


def config_fingerprint(cfg: TrainConfig) -> str:
    return fingerprint(cfg.to_dict())


def prepare_dataset(records, lookback: int = 20, fractions=(0.70, 0.15, 0.15), pad: bool = True) -> Dataset:
    """Window, split chronologically and standardize with training statistics."""
    windows = windows_from_records(records, lookback, pad)
    train_ws, val_ws, test_ws = chronological_split(windows, *fractions)
    scaler = fit_scaler(train_ws)
    return Dataset(*(apply_scaler(scaler, w) for w in (train_ws, val_ws, test_ws)), scaler=scaler)


SPLITS = ("train", "val", "test")
DATASET_FORMAT_VERSION = 1


def save_dataset(data: Dataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        getattr(data, name).save(directory / f"{name}.npz")
    payload = {"format_version": DATASET_FORMAT_VERSION,
               "scaler": data.scaler.to_dict() if data.scaler is not None else None}
    (directory / "scaler.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = directory / "scaler.json"
    if not meta.exists():
        raise MissingFile(f"{directory} is not a prepared data directory (no scaler.json)")
    payload = json.loads(meta.read_text())
    if payload.get("format_version") != DATASET_FORMAT_VERSION:
        raise SchemaError(f"{meta}: unsupported format {payload.get('format_version')}")
    parts = []
    for name in SPLITS:
        path = directory / f"{name}.npz"
        if not path.exists():
            raise MissingFile(f"missing split cache {path}")
        parts.append(WindowSet.load(path))
    scaler = Scaler.from_dict(payload["scaler"]) if payload.get("scaler") else None
    return Dataset(*parts, scaler=scaler)
