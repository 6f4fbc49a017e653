"""``factsurv`` command-line entry point.

Exit codes: 0 ok, 2 usage, 3 missing file / IO, 4 schema, 5 config,
6 numeric or training failure, 7 invalid argument, 8 degenerate statistic,
9 internal error.  Failures print exactly one ``error: <category>: <msg>``
line on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .data import FEATURE_NAMES, ingest_csv, to_idle_events, write_csv
from .errors import ConfigError, DegenerateTest, FactError, InvalidArgument, MissingFile, SchemaError
from .metrics import EvalReport
from .models import ATTENTION_KINDS, RiskModel
from .survival import kaplan_meier, logrank_test, stratify
from .synth import SynthConfig, synth_generate
from .training import (SCENARIO_KEYS, Dataset, GridSpec, TrainConfig, ablation_run, ablation_table,
                       attention_profile, evaluate_model, fit_model, grid_search, load_dataset,
                       prepare_dataset, save_dataset)
from .training import train as train_model

log = logging.getLogger("factsurv")

SEED_ENV = "FACTSURV_SEED"
MANIFEST_FORMAT_VERSION = 1


# -- config files ----------------------------------------------------------

def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv):
    def parse(text: str):
        return [conv(t.strip()) for t in text.split(",") if t.strip()]
    return parse


def _patience(text: str) -> float:
    return float("inf") if text.strip().lower() in ("inf", "none", "off") else int(text)


SYNTH_KEYS = {"n_drivers": int, "horizon_days": int, "frailty_sd": float, "history_coef": float,
              "history_len": int, "trip_rate": float, "weibull_shape": float, "weibull_scale": float,
              "work_prob": float, "start_date": str, "seed": int}
TRAIN_KEYS = {"lr": float, "batch_size": int, "max_epochs": int, "patience": _patience,
              "seeds": _list(int), "feature_groups": _list(str), "coxph_windowed": _bool}
MODEL_KEYS = {"n_heads": int, "frailty_dim": int, "n_layers": int, "hidden_dim": int,
              "dropout": float, "ffn_mult": int}
GRID_KEYS = {k: _list(int) for k in ("n_heads", "frailty_dim", "n_layers", "hidden_dim")}
ABLATION_KEYS = {"scenarios": _list(str)}


def read_config(path: str | None, schema: dict[str, dict | None]) -> dict[str, dict]:
    """Parse an INI file against ``schema``; a ``None`` section accepts any float keys."""
    out: dict[str, dict] = {name: {} for name in schema}
    if path is None:
        return out
    if not Path(path).exists():
        raise MissingFile(f"no such config file: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc.message.splitlines()[0]}") from None
    for section in parser.sections():
        if section not in schema:
            raise ConfigError(f"{path}: unknown section [{section}]")
        keys = schema[section]
        for key, raw in parser.items(section):
            conv = float if keys is None else keys.get(key)
            if conv is None:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {exc}") from None
    return out


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def write_config(path: Path, sections: dict[str, dict]) -> None:
    lines = []
    for name, values in sections.items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {_fmt(v)}" for k, v in values.items()]
        lines.append("")
    path.write_text("\n".join(lines))


def train_config_from(parsed: dict, model: str = "fact") -> TrainConfig:
    cfg = TrainConfig(model=model, **parsed.get("train", {}))
    cfg.fact = replace(cfg.fact, **parsed.get("model", {}))
    cfg.validate()
    cfg.fact.validate()
    return cfg


def train_sections(cfg: TrainConfig) -> dict[str, dict]:
    train = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name in TRAIN_KEYS}
    model = {k: getattr(cfg.fact, k) for k in MODEL_KEYS}
    return {"train": train, "model": model}


# -- manifests -------------------------------------------------------------

def _hash_path(path: Path) -> dict[str, str]:
    files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    out = {}
    for f in files:
        if f.name.endswith("manifest.json"):
            continue
        out[str(f)] = hashlib.sha256(f.read_bytes()).hexdigest()
    return out


class Run:
    """Collects what a RunManifest needs and writes it however the command ends."""

    def __init__(self, command: str, argv: list[str], manifest_path: Path):
        self.command = command
        self.argv = argv
        self.manifest_path = manifest_path
        self.config: dict = {}
        self.inputs: dict[str, str] = {}
        self.seed: int | None = None
        self.started = time.time()

    def add_input(self, path) -> None:
        path = Path(path)
        if not path.exists():
            raise MissingFile(f"no such file or directory: {path}")
        self.inputs.update(_hash_path(path))

    def write(self, status: str, error: str = "") -> None:
        payload = {"format_version": MANIFEST_FORMAT_VERSION, "command": self.command, "argv": self.argv,
                   "config": self.config, "inputs": self.inputs, "seed": self.seed,
                   "tool_version": __version__, "started": self.started, "finished": time.time(),
                   "status": status, "error": error}
        try:
            self.manifest_path.parent.mkdir(parents=True, exist_ok=True)
            self.manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
        except OSError as exc:
            log.warning("could not write manifest %s: %s", self.manifest_path, exc)


def resolve_seed(flag: int | None) -> int | None:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_compatible(model: RiskModel, ws) -> None:
    need = model.config.input_dim
    have = ws.n_covariates + 2
    if need != have:
        raise SchemaError(f"checkpoint expects {need} inputs per step, data has {have}")
    windowed = model.kind == "linear" and model.params["beta"].shape[0] != model.config.n_covariates
    if (model.kind in ATTENTION_KINDS or windowed) and model.config.seq_len != ws.seq_len:
        raise SchemaError(f"checkpoint expects sequence length {model.config.seq_len}, data has {ws.seq_len}")


def _split(data: Dataset, name: str):
    return getattr(data, name)


# -- commands --------------------------------------------------------------

def cmd_synth(args, run: Run) -> None:
    parsed = read_config(args.config, {"synth": SYNTH_KEYS, "beta": None})
    if args.config:
        run.add_input(args.config)
    cfg = SynthConfig(**parsed["synth"])
    if parsed["beta"]:
        cfg.beta = dict(parsed["beta"])
    seed = resolve_seed(args.seed)
    if seed is not None:
        cfg.seed = seed
    run.seed = cfg.seed
    run.config = asdict(cfg)
    records, truth = synth_generate(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(records, out)
    out.with_suffix(".truth.json").write_text(truth.to_json() + "\n")
    log.info("wrote %d idle events for %d drivers to %s", len(records), cfg.n_drivers, out)


def cmd_prep(args, run: Run) -> None:
    run.add_input(args.input)
    try:
        fractions = tuple(float(x) for x in args.split.split(","))
    except ValueError:
        raise InvalidArgument(f"--split must be three comma-separated numbers, got {args.split!r}") from None
    if len(fractions) != 3:
        raise InvalidArgument(f"--split needs three fractions, got {len(fractions)}")
    run.config = {"lookback": args.lookback, "split": list(fractions), "pad": not args.no_pad}
    if args.lookback < 0:
        raise InvalidArgument("--lookback must be >= 0")
    records = ingest_csv(args.input)
    data = prepare_dataset(records, args.lookback, fractions, pad=not args.no_pad)
    save_dataset(data, _out_dir(args.out))
    log.info("windows: train %d, val %d, test %d", len(data.train), len(data.val), len(data.test))


def _svg(curves: list[tuple[str, np.ndarray, np.ndarray]]) -> str:
    w, h, pad = 640, 400, 50
    t_max = max((float(t[-1]) for _, t, _ in curves if t.size), default=1.0) or 1.0
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
             f'<rect x="{pad}" y="{pad // 2}" width="{w - 2 * pad}" height="{h - 2 * pad}" fill="none" stroke="#888"/>']
    for k, (label, t, s) in enumerate(curves):
        pts, prev = [], 1.0
        x = lambda v: pad + (w - 2 * pad) * v / t_max
        y = lambda v: pad // 2 + (h - 2 * pad) * (1.0 - v)
        pts.append(f"{x(0):.2f},{y(1):.2f}")
        for ti, si in zip(t, s):
            pts.append(f"{x(ti):.2f},{y(prev):.2f}")
            pts.append(f"{x(ti):.2f},{y(si):.2f}")
            prev = si
        color = colors[k % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{w - pad - 150}" y="{pad + 16 * k}" fill="{color}" font-size="12">{label}</text>')
    parts.append(f'<text x="{w // 2}" y="{h - 10}" font-size="12">idle time (min)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_km(args, run: Run) -> None:
    run.add_input(args.input)
    run.config = {"stratify": args.stratify, "svg": args.svg}
    events = to_idle_events(ingest_csv(args.input))
    groups = stratify(events, args.stratify, FEATURE_NAMES)
    out = _out_dir(args.out)
    index = ["index,group,n,events,file"]
    curves = []
    arrays = {}
    for k, (label, evs) in enumerate(groups.items()):
        d = np.array([e.duration for e in evs], dtype=np.float64)
        ev = np.array([e.event for e in evs], dtype=np.int64)
        arrays[label] = (d, ev)
        name = f"km_{k}.csv" if evs else ""
        index.append(f"{k},{label},{len(evs)},{int(ev.sum())},{name}")
        if not evs:
            continue
        curve = kaplan_meier(d, ev)
        rows = ["time,survival", f"{0.0!r},{1.0!r}"]
        rows += [f"{t!r},{s!r}" for t, s in zip(curve.knots.tolist(), curve.values.tolist())]
        (out / name).write_text("\n".join(rows) + "\n")
        curves.append((label, curve.knots, curve.values))
    (out / "groups.csv").write_text("\n".join(index) + "\n")
    table = ["group_a,group_b,chi2,p_value,status"]
    labels = list(groups)
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            a, b = arrays[labels[i]], arrays[labels[j]]
            try:
                chi2, p = logrank_test(a[0], a[1], b[0], b[1])
                table.append(f"{labels[i]},{labels[j]},{chi2!r},{p!r},ok")
            except (DegenerateTest, InvalidArgument) as exc:
                table.append(f"{labels[i]},{labels[j]},,,{exc.category}")
    (out / "logrank.csv").write_text("\n".join(table) + "\n")
    if args.svg:
        (out / "km.svg").write_text(_svg(curves))


def _load_train_config(args, run: Run, model: str, extra: dict | None = None) -> tuple[TrainConfig, dict]:
    schema = {"train": TRAIN_KEYS, "model": MODEL_KEYS, **(extra or {})}
    parsed = read_config(args.config, schema)
    if args.config:
        run.add_input(args.config)
    return train_config_from(parsed, model), parsed


def _epoch_logger(path: Path) -> Callable[[int, float, float], None]:
    path.write_text("epoch,train_loss,val_c_index\n")

    def on_epoch(epoch: int, loss: float, val_c: float) -> None:
        with path.open("a") as fh:
            fh.write(f"{epoch},{loss!r},{val_c!r}\n")
    return on_epoch


def cmd_fit(args, run: Run) -> None:
    run.add_input(args.data)
    cfg, _ = _load_train_config(args, run, args.model)
    data = load_dataset(args.data)
    cfg.lookback = data.train.seq_len - 1
    seed = resolve_seed(args.seed)
    seed = cfg.seeds[0] if seed is None else seed
    cfg.seeds = [seed]
    run.seed = seed
    run.config = {"model": args.model, **train_sections(cfg)}
    out = _out_dir(args.out)
    write_config(out / "config.ini", train_sections(cfg))
    if cfg.model == "coxph":
        model, history = fit_model(cfg, data, seed)
        (out / "metrics.csv").write_text(history.to_csv())
    else:
        model, _ = train_model(cfg, data.train, data.val, seed, on_epoch=_epoch_logger(out / "metrics.csv"))
    model.save(out / "model.npz")
    report = evaluate_model(model, data.train, data.test, seed, run.config)
    (out / "report.txt").write_text(report.to_text())
    log.info("test C-index %.4f, IBS %.4f", report.c_index_integrated, report.ibs)


def cmd_eval(args, run: Run) -> None:
    run.add_input(args.model)
    run.add_input(args.data)
    model = RiskModel.load(args.model)
    data = load_dataset(args.data)
    target = _split(data, args.split)
    _check_compatible(model, target)
    seed = resolve_seed(args.seed) or 0
    run.seed = seed
    run.config = {"split": args.split, "kind": model.kind, "model_config": asdict(model.config)}
    report = evaluate_model(model, data.train, target, seed, run.config)
    out = _out_dir(args.out)
    (out / "report.txt").write_text(report.to_text())
    EvalReport.from_text(report.to_text())
    print(report.to_text(), end="")


def cmd_attention(args, run: Run) -> None:
    run.add_input(args.model)
    run.add_input(args.data)
    model = RiskModel.load(args.model)
    data = load_dataset(args.data)
    target = _split(data, args.split)
    _check_compatible(model, target)
    run.config = {"split": args.split, "layer": args.layer}
    weights = attention_profile(model, target, layer=args.layer)
    L = weights.size
    rows = ["position,lag,weight"] + [f"{i},{i - (L - 1)},{w!r}" for i, w in enumerate(weights.tolist())]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(rows) + "\n")


def cmd_grid(args, run: Run) -> None:
    run.add_input(args.spec)
    run.add_input(args.data)
    parsed = read_config(args.spec, {"grid": GRID_KEYS, "train": TRAIN_KEYS, "model": MODEL_KEYS})
    base = train_config_from(parsed, "fact")
    grid = GridSpec(**parsed["grid"])
    data = load_dataset(args.data)
    base.lookback = data.train.seq_len - 1
    seed = resolve_seed(args.seed)
    seed = base.seeds[0] if seed is None else seed
    run.seed = seed
    run.config = {"grid": asdict(grid), **train_sections(base)}
    out = _out_dir(args.out)
    write_config(out / "config.ini", {"grid": asdict(grid), **train_sections(base)})
    results = grid_search(grid, base, data, seed)
    rows = ["rank,n_heads,frailty_dim,n_layers,hidden_dim,val_c_index,status,error"]
    for rank, res in enumerate(results, 1):
        c = res.cell
        err = res.error.replace(",", ";")
        rows.append(f"{rank},{c['n_heads']},{c['frailty_dim']},{c['n_layers']},{c['hidden_dim']},"
                    f"{res.val_c_index!r},{res.status},{err}")
    (out / "grid.csv").write_text("\n".join(rows) + "\n")


def cmd_ablate(args, run: Run) -> None:
    run.add_input(args.data)
    base, parsed = _load_train_config(args, run, "fact", {"ablation": ABLATION_KEYS})
    data = load_dataset(args.data)
    base.lookback = data.train.seq_len - 1
    seed = resolve_seed(args.seed)
    if seed is not None:
        base.seeds = [seed]
    run.seed = base.seeds[0]
    keys = parsed["ablation"].get("scenarios", list(SCENARIO_KEYS))
    unknown = [k for k in keys if k not in SCENARIO_KEYS]
    if unknown:
        raise ConfigError(f"unknown ablation scenarios {unknown}; choose from {list(SCENARIO_KEYS)}")
    scenarios = {SCENARIO_KEYS[k][0]: SCENARIO_KEYS[k][1] for k in keys}
    run.config = {"scenarios": keys, **train_sections(base)}
    out = _out_dir(args.out)
    write_config(out / "config.ini", {"ablation": {"scenarios": keys}, **train_sections(base)})
    cells = ablation_run(base, data, scenarios)
    (out / "ablation.csv").write_text(ablation_table(cells))
    rows = ["scenario,with_embedding,c_index,status,error"]
    rows += [f"{c.scenario},{int(c.with_embedding)},{c.c_index!r},{c.status},{c.error.replace(',', ';')}"
             for c in cells]
    (out / "cells.csv").write_text("\n".join(rows) + "\n")


# -- parser ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"master seed (default: ${SEED_ENV}, else the config value)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="factsurv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic idle-event CSV")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth, out_kind="file")

    p = sub.add_parser("prep", parents=[common], help="window, split and standardize a CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--lookback", type=int, default=20)
    p.add_argument("--split", default="0.7,0.15,0.15")
    p.add_argument("--no-pad", action="store_true", help="emit only full-length windows")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep, out_kind="dir")

    p = sub.add_parser("km", parents=[common], help="Kaplan-Meier curves and log-rank tests by stratum")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--stratify", required=True)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_km, out_kind="dir")

    p = sub.add_parser("fit", parents=[common], help="train a model")
    p.add_argument("--model", required=True,
                   choices=["coxph", "frailty-coxph", "deepsurv", "transformer-cox", "fact"])
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit, out_kind="dir")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval, out_kind="dir")

    p = sub.add_parser("grid", parents=[common], help="hyperparameter grid search")
    p.add_argument("--spec", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid, out_kind="dir")

    p = sub.add_parser("ablate", parents=[common], help="feature-group and frailty ablation")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate, out_kind="dir")

    p = sub.add_parser("attention", parents=[common], help="mean attention over window positions")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--layer", type=int, default=-1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attention, out_kind="file")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    manifest = out / "manifest.json" if args.out_kind == "dir" else out.with_name(out.name + ".manifest.json")
    run = Run(args.command, argv, manifest)
    try:
        args.func(args, run)
    except FactError as exc:
        msg = " ".join(str(exc).split())
        run.write("failed", f"{exc.category}: {msg}")
        print(f"error: {exc.category}: {msg}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        run.write("failed", f"missing-file: {exc}")
        print(f"error: missing-file: {exc}", file=sys.stderr)
        return MissingFile.exit_code
    except OSError as exc:
        run.write("failed", f"io: {exc}")
        print(f"error: io: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # last resort, still one parsable line
        log.debug("internal error", exc_info=True)
        msg = " ".join(f"{type(exc).__name__}: {exc}".split())
        run.write("failed", f"internal: {msg}")
        print(f"error: internal: {msg}", file=sys.stderr)
        return 9
    run.write("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
