"""Helpers shared by the experiment scripts."""

import argparse
import logging
import time

from factsurv.synth import SynthConfig, synth_generate
from factsurv.training import prepare_dataset


def base_parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--drivers", type=int, default=500)
    p.add_argument("--days", type=int, default=20)
    p.add_argument("--synth-seed", type=int, default=0)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--out", default=None, help="optional CSV path")
    return p


def load_population(args, lookback: int = 20):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    records, truth = synth_generate(SynthConfig(n_drivers=args.drivers, horizon_days=args.days,
                                                seed=args.synth_seed))
    data = prepare_dataset(records, lookback=lookback)
    print(f"{len(records)} idle events, windows {len(data.train)}/{len(data.val)}/{len(data.test)}, "
          f"{time.perf_counter() - t0:.1f}s")
    return records, truth, data


def emit(rows: list[str], path) -> None:
    text = "\n".join(rows) + "\n"
    print(text, end="")
    if path:
        with open(path, "w") as fh:
            fh.write(text)
