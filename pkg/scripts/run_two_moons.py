"""Two-moons classification: accuracy, OOD AUC and entropy at boundary vs. arc-centre points."""

import argparse
from pathlib import Path

import numpy as np

from bali.experiment import cell_ood_points, fit, load_config
from bali.metrics import accuracy, ece, ood_auc

ROOT = Path(__file__).resolve().parent.parent
BOUNDARY = np.array([[0.5, 0.25], [0.0, 0.75], [1.0, -0.25]])
CENTERS = np.array([[0.0, 1.0], [1.0, -0.5]])


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=ROOT / "configs" / "two_moons.yaml")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args()
    cfg = load_config(args.config)
    accs, aucs = [], []
    for seed in args.seeds:
        runner, ds = fit(cfg, seed)
        Xte, yte = ds.test()
        pred = runner.predictive(Xte)
        accs.append(accuracy(pred.probs, yte))
        aucs.append(ood_auc(pred.entropy, runner.predictive(cell_ood_points(cfg, ds, seed)).entropy))
        edge = runner.predictive(BOUNDARY).entropy
        centre = runner.predictive(CENTERS).entropy
        print(f"seed {seed}: acc {accs[-1]:.3f}  ece {ece(pred.probs, yte):.3f}  ood auc {aucs[-1]:.3f}  "
              f"entropy boundary {np.round(edge, 3)}  centres {np.round(centre, 3)}")
    print(f"mean acc {np.mean(accs):.3f}  mean ood auc {np.mean(aucs):.3f}")


if __name__ == "__main__":
    main()
