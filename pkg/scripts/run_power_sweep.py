#!/usr/bin/env python3
"""Mean sum rate versus transmit power budget for two per-layer element counts,
plus the interpolated budget each mode needs to hit a target rate."""

import argparse
import csv

from sfim.config_io import load_run_config
from sfim.experiments import ExperimentSpec, run_power_sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/defaults.cfg")
    parser.add_argument("--budgets", type=float, nargs="+",
                        default=[12, 15, 18, 21, 24, 27], help="budgets in dBm")
    parser.add_argument("--elements", type=int, nargs="+", default=[64, 100])
    parser.add_argument("--target", type=float, default=7.0)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default="out/power_sweep")
    args = parser.parse_args()

    spec = ExperimentSpec(kind="power_sweep", values=tuple(args.budgets),
                          trials=args.trials, config=load_run_config(args.config),
                          out_dir=args.out, element_counts=tuple(args.elements),
                          target_rate=args.target, n_jobs=args.threads)
    run_power_sweep(spec)
    with open(f"{args.out}/power_saving.csv") as fh:
        for row in csv.DictReader(fh):
            print(f"N={row['elements']} {row['mode']}: needs {row['budget_dbm']} dBm "
                  f"for {row['target_rate']} bps/Hz")
    print(f"sweeps written to {args.out}/sweep_N*.csv")


if __name__ == "__main__":
    main()
