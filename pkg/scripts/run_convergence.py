"""Training NLL curves of BALI and MAP+Adam on sinc, and iterations each needs
to come within 5% of BALI's final value."""

import argparse
import csv
import dataclasses
from pathlib import Path

import numpy as np

from bali.experiment import load_config, nll_curve

ROOT = Path(__file__).resolve().parent.parent


def first_below(its, vals, level):
    hit = np.nonzero(vals <= level)[0]
    return its[hit[0]] if hit.size else float("inf")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "sinc.yaml")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--map-iterations", type=int, help="MAP budget (default: same as BALI)")
    p.add_argument("--every", type=int, default=10)
    p.add_argument("--out", type=Path, default=Path("results/convergence"))
    args = p.parse_args()
    base = dataclasses.replace(load_config(args.config), iterations=args.iterations)
    map_cfg = dataclasses.replace(base, method="map", iterations=args.map_iterations or args.iterations)
    args.out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        its_b, nll_b = nll_curve(base, seed, args.every)
        its_a, nll_a = nll_curve(map_cfg, seed, args.every)
        with (args.out / f"curves_seed{seed}.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "iteration", "nll"])
            w.writerows(("bali", i, repr(float(v))) for i, v in zip(its_b, nll_b))
            w.writerows(("map", i, repr(float(v))) for i, v in zip(its_a, nll_a))
        level = nll_b[-1] + 0.05 * abs(nll_b[-1])
        print(f"seed {seed}: final BALI nll {nll_b[-1]:.3f}; within 5% at "
              f"BALI {first_below(its_b, nll_b, level)}, MAP {first_below(its_a, nll_a, level)}")


if __name__ == "__main__":
    main()
