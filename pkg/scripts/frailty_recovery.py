"""Rank agreement between learned per-driver frailty and the generator's log-frailty."""

from collections import Counter

import numpy as np

from _common import base_parser, emit, load_population
from factsurv.training import TrainConfig, run_seeds


def spearman(a, b) -> float:
    ra = np.argsort(np.argsort(a))
    rb = np.argsort(np.argsort(b))
    return float(np.corrcoef(ra, rb)[0, 1])


def main():
    p = base_parser(__doc__)
    p.add_argument("--min-events", type=int, default=20)
    args = p.parse_args()
    records, truth, data = load_population(args)
    counts = Counter(r.driver_id for r in records)
    rows = ["model,seed,drivers,spearman"]
    for name in ("frailty-coxph", "fact"):
        cfg = TrainConfig(model=name, lr=args.lr, max_epochs=args.epochs, patience=args.patience, seeds=args.seeds)
        _, models = run_seeds(cfg, data)
        for seed, model in zip(args.seeds, models):
            learned = model.frailty_contribution()
            ids = sorted(d for d in learned if counts[d] >= args.min_events)
            rho = spearman([learned[d] for d in ids], [truth.frailty[d] for d in ids])
            rows.append(f"{name},{seed},{len(ids)},{rho:.4f}")
    emit(rows, args.out)


if __name__ == "__main__":
    main()
