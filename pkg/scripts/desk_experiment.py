"""Generate the 6-class synthetic grasp set and run the desk-preset experiment.

    python3 scripts/desk_experiment.py --out runs/desk [--runs 10] [--noise 0.7]
"""
import argparse
import json
from dataclasses import asdict
import time
from pathlib import Path

import numpy as np

from hapticfusion.data import SyntheticConfig, gen_synthetic, save_dataset
from hapticfusion.evaluation import ExperimentConfig, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=100, help="seed of the first run")
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.7)
    ap.add_argument("--parallel", type=int, default=1)
    ap.add_argument("--save-data", action="store_true", help="also write the generated dataset under OUT/data")
    args = ap.parse_args()

    data_cfg = SyntheticConfig(classes=6, grasps_per_class=60, noise=args.noise, seed=args.data_seed)
    ds = gen_synthetic(data_cfg)
    if args.save_data:
        save_dataset(ds, args.out / "data")

    config = ExperimentConfig.desk()
    start = time.perf_counter()
    report = run_experiment(ds, config, args.runs, args.seed, parallel=args.parallel)
    elapsed = time.perf_counter() - start
    report.write(args.out)
    (args.out / "config.json").write_text(json.dumps({"data": asdict(data_cfg), "experiment": config.to_dict()},
                                                     indent=2, sort_keys=True, default=list) + "\n")

    for c in report.classifiers:
        s = report.summary(c)
        print(f"{c:16s} mean {s['mean']:.3f}  std {s['std']:.3f}  median {s['median']:.3f}")
    best = np.maximum(report.rates("tactile"), report.rates("kinesthetic"))
    wins = int(np.sum(report.rates("bayesian_fusion") > best))
    print(f"bayesian fusion beats both single modalities in {wins}/{args.runs} runs ({elapsed:.0f}s)")


if __name__ == "__main__":
    main()
