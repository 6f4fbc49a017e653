"""C-index and Brier score of FACT as the lookback window grows."""

from _common import base_parser, emit, load_population
from factsurv.training import TrainConfig, run_seeds


def main():
    p = base_parser(__doc__)
    p.add_argument("--lookbacks", type=int, nargs="+", default=[0, 5, 10, 15, 20])
    p.add_argument("--model", default="fact")
    args = p.parse_args()
    _, _, data = load_population(args, lookback=max(args.lookbacks))
    rows = ["lookback,c_index,c25,c50,c75,brier25,brier50,brier75"]
    for h in args.lookbacks:
        cfg = TrainConfig(model=args.model, lr=args.lr, max_epochs=args.epochs, patience=args.patience,
                          seeds=args.seeds, lookback=h)
        s, _ = run_seeds(cfg, data)
        vals = [s.mean_sd(lambda r: r.c_index_integrated)[0]]
        vals += [s.mean_sd(lambda r, k=k: r.c_index_at[k])[0] for k in ("25%", "50%", "75%")]
        vals += [s.mean_sd(lambda r, k=k: r.brier_at[k])[0] for k in ("25%", "50%", "75%")]
        rows.append(f"{h}," + ",".join(f"{v:.5f}" for v in vals))
        print(rows[-1], flush=True)
    emit(rows, args.out)


if __name__ == "__main__":
    main()
