"""Kaplan-Meier medians and pairwise log-rank tests for every stratification rule."""

import argparse

import numpy as np

from factsurv.data import FEATURE_NAMES, to_idle_events
from factsurv.errors import DegenerateTest
from factsurv.survival import kaplan_meier, logrank_test, stratify
from factsurv.synth import SynthConfig, synth_generate

RULES = ["time_of_day", "day_of_week", "fare", "requests", "dist_downtown", "dist_airport"]


def median_time(d, e) -> float:
    km = kaplan_meier(d, e)
    below = np.flatnonzero(km.values <= 0.5)
    return float(km.knots[below[0]]) if below.size else float("inf")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--drivers", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    records, _ = synth_generate(SynthConfig(n_drivers=args.drivers, seed=args.seed))
    events = to_idle_events(records)
    for rule in RULES:
        groups = stratify(events, rule, FEATURE_NAMES)
        print(f"\n[{rule}]")
        arrays = {}
        for label, evs in groups.items():
            d = np.array([e.duration for e in evs])
            ev = np.array([e.event for e in evs])
            arrays[label] = (d, ev)
            med = median_time(d, ev) if len(evs) else float("nan")
            print(f"  {label:<22} n={len(evs):>6}  log-offs={int(ev.sum()):>5}  median={med:.1f} min")
        labels = list(arrays)
        for i in range(len(labels)):
            for j in range(i + 1, len(labels)):
                try:
                    chi2, pv = logrank_test(*arrays[labels[i]], *arrays[labels[j]])
                    print(f"  {labels[i]} vs {labels[j]}: chi2={chi2:.2f} p={pv:.3g}")
                except DegenerateTest:
                    print(f"  {labels[i]} vs {labels[j]}: degenerate")


if __name__ == "__main__":
    main()
