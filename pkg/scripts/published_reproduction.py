"""Full-scale run on the recorded 36-object grasp dataset with the published schedules.

Convert the upstream arrays first, then run 20 repetitions:

    hapticfusion convert --src upstream.npz --out data/recorded
    python3 scripts/published_reproduction.py --data data/recorded --out runs/published --parallel 8

Expect hours of compute per run on a single core.
"""
import argparse
from pathlib import Path

import numpy as np

from hapticfusion.data import load_dataset
from hapticfusion.evaluation import CLASSIFIERS, ExperimentConfig, run_experiment

TARGETS = {"tactile": 0.806, "kinesthetic": 0.675, "neural_fusion": 0.815, "bayesian_fusion": 0.862}
HARD_CLASSES = range(6, 10)  # four near-identical bags, indices 7-10 counted from one


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()

    ds = load_dataset(args.data)
    report = run_experiment(ds, ExperimentConfig.published(), args.runs, args.seed, parallel=args.parallel)
    report.write(args.out)

    for c in CLASSIFIERS:
        mean = report.summary(c)["mean"]
        print(f"{c:16s} mean {mean:.3f}  target {TARGETS[c]:.3f}  gap {100 * (mean - TARGETS[c]):+.1f} pp")
    for c in CLASSIFIERS:
        recall = np.diag(report.mean_confusion(c))[list(HARD_CLASSES)]
        print(f"{c:16s} recall of classes 7-10: {np.round(recall, 3).tolist()}")


if __name__ == "__main__":
    main()
