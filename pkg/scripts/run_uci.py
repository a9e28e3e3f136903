"""UCI-style regression over several splits; prints mean test RMSE and NLL with standard errors.

Expects CSV files with the target in column ``y`` (see the configs for paths).
"""

import argparse
from pathlib import Path

import yaml

from bali.experiment import config_from_dict, run_experiment, summarize

ROOT = Path(__file__).resolve().parent.parent


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--datasets", nargs="+", default=["yacht", "energy"])
    p.add_argument("--data-dir", type=Path, default=ROOT / "tests" / "fixtures" / "uci",
                   help="directory holding <name>.csv")
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    for name in args.datasets:
        data = yaml.safe_load((ROOT / "configs" / f"uci_{name}.yaml").read_text())
        data["dataset"]["path"] = str(args.data_dir / f"{name}.csv")
        cfg = config_from_dict(data)
        res = run_experiment(cfg, args.out / f"uci_{name}")
        for metric in ("rmse", "nll"):
            mean, se = summarize(res.rows, metric)
            print(f"{name}: {metric} {mean:.3f} +- {se:.3f}")
        for seed, split, msg in res.errors:
            print(f"{name}: split {split} failed: {msg}")


if __name__ == "__main__":
    main()
