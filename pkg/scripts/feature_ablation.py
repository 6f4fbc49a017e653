"""Drop one covariate group (or the history) at a time, with and without driver embeddings."""

from _common import base_parser, emit, load_population
from factsurv.training import TrainConfig, ablation_run, ablation_table


def main():
    args = base_parser(__doc__).parse_args()
    _, _, data = load_population(args)
    base = TrainConfig(lr=args.lr, max_epochs=args.epochs, patience=args.patience, seeds=args.seeds)
    cells = ablation_run(base, data)
    for c in cells:
        if c.status != "ok":
            print(f"{c.scenario} embedding={c.with_embedding}: {c.error}")
    emit(ablation_table(cells).splitlines(), args.out)


if __name__ == "__main__":
    main()
