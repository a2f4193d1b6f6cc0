"""Fluid-limit check of the tracking policy: median sup-norm error of T-bar against x* t as r doubles.

Usage::

    python scripts/fluid_limit.py --r-list 5,10,20,40 --seeds 40 --out fluid.csv
"""
import argparse
import csv

import numpy as np

from htnet.examples import example_names, load_example
from htnet.harness import ExperimentConfig, fluid_errors, tracking_params
from htnet.planning import analyze


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--examples", default=",".join(example_names()))
    ap.add_argument("--r-list", default="5,10,20,40")
    ap.add_argument("--seeds", type=int, default=40)
    ap.add_argument("--t-max", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="fluid.csv")
    args = ap.parse_args(argv)
    r_list = [float(r) for r in args.r_list.split(",")]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example", "r", "median_error", "ratio"])
        for name in args.examples.split(","):
            plan = analyze(load_example(name))
            params = tracking_params(ExperimentConfig(example=name), plan)
            med = np.median(fluid_errors(plan, params, r_list, args.seeds, args.t_max, args.seed), axis=1)
            for k, r in enumerate(r_list):
                ratio = "" if k == 0 else repr(float(med[k] / med[k - 1]))
                w.writerow([name, repr(r), repr(float(med[k])), ratio])
                print(f"{name:14s} r={r:g}: median error {med[k]:.4f} {ratio and f'ratio {float(ratio):.3f}'}")


if __name__ == "__main__":
    main()
