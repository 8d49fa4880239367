"""Command-line entry point: ``hapticfusion <subcommand> ...``.

Exit status is 0 on success, 2 for invalid arguments or configuration and 1
for runtime failures. Files are only ever written below ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (
    SplitCounts,
    SyntheticConfig,
    convert_upstream,
    gen_synthetic,
    load_dataset,
    make_split,
    normalize,
    save_dataset,
)
from .errors import DatasetFormatError, InvalidArgumentError, TrainingError
from .evaluation import BaseModels, ExperimentConfig, base_posteriors, evaluate_checkpoints, run_experiment
from .fusion import bayes_fuse, check_distribution, map_class, uniform_prior
from .models import load_params, model_kind, save_params
from .training import TrainSchedule, train_classifier, train_fusion_head


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _non_negative_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _add_schedule_flags(p: argparse.ArgumentParser, prefix: str = "") -> None:
    dash = f"--{prefix}-" if prefix else "--"
    p.add_argument(f"{dash}epochs", type=_non_negative_int, dest=f"{prefix}_epochs" if prefix else "epochs")
    p.add_argument(f"{dash}lr", type=_non_negative_float, dest=f"{prefix}_lr" if prefix else "lr")


def _add_counts_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--counts", type=_positive_int, nargs=3, metavar=("TEST", "POOL", "FUSION"),
        help="grasps per class for testing, for training, and (of the training pool) for the fusion head; "
             "default 45 15 5",
    )


def _counts(args) -> SplitCounts:
    if args.counts is None:
        return SplitCounts()
    test, pool, fusion = args.counts
    if fusion >= pool:
        raise UsageError("--counts: FUSION must be smaller than POOL")
    return SplitCounts(test=test, pool=pool, fusion=fusion)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hapticfusion", description="Tactile/kinesthetic classifiers and late fusion.", allow_abbrev=False
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", allow_abbrev=False, help="write a synthetic dataset in the canonical format")
    g.add_argument("--classes", type=_positive_int, default=6)
    g.add_argument("--grasps", type=_positive_int, default=60, help="grasps per class")
    g.add_argument("--frames", type=_positive_int, default=SyntheticConfig.frames, help="tactile frames T")
    g.add_argument("--samples", type=_positive_int, default=SyntheticConfig.samples, help="kinesthetic samples K")
    g.add_argument("--noise", type=_non_negative_float, default=SyntheticConfig.noise)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", type=Path, required=True)

    c = sub.add_parser("convert", allow_abbrev=False, help="convert an upstream array bundle to the canonical format")
    c.add_argument("--src", type=Path, required=True, help=".npz file or directory of .npy arrays")
    c.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", allow_abbrev=False, help="train one classifier or the fusion head")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--model", choices=["tactile", "kinesthetic", "fusion"], required=True)
    t.add_argument("--protocol", choices=["bayesian", "neural"], default="bayesian")
    t.add_argument("--seed", type=int, required=True, help="split and initialisation seed")
    t.add_argument("--shuffle-seed", type=int, help="mini-batch order seed (default: --seed)")
    t.add_argument("--preset", choices=["desk", "published"], default="desk")
    _add_schedule_flags(t)
    t.add_argument("--batch-size", type=_positive_int)
    t.add_argument("--filters", type=_positive_int, help="ConvLSTM filters")
    t.add_argument("--hidden", type=_positive_int, nargs=2, metavar=("H1", "H2"), help="LSTM widths")
    t.add_argument("--width", type=_positive_int, help="fusion head width")
    t.add_argument("--tactile", type=Path, help="tactile checkpoint (fusion head only)")
    t.add_argument("--kinesthetic", type=Path, help="kinesthetic checkpoint (fusion head only)")
    _add_counts_flag(t)
    t.add_argument("--out", type=Path, required=True)

    e = sub.add_parser("eval", allow_abbrev=False, help="score checkpoints on the test grasps of a split")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--protocol", choices=["bayesian", "neural"], default="bayesian")
    e.add_argument("--seed", type=int, required=True, help="split seed the checkpoints were trained with")
    e.add_argument("--tactile", type=Path, required=True)
    e.add_argument("--kinesthetic", type=Path, required=True)
    e.add_argument("--fusion", type=Path)
    _add_counts_flag(e)
    e.add_argument("--out", type=Path, required=True)

    x = sub.add_parser("experiment", allow_abbrev=False, help="repeated split/train/test of all four classifiers")
    x.add_argument("--data", type=Path, required=True)
    x.add_argument("--runs", type=_positive_int, default=20)
    x.add_argument("--seed", type=int, required=True, help="run r uses seed + r")
    x.add_argument("--preset", choices=["desk", "published"], default="desk")
    for prefix in ("tactile", "kinesthetic", "fusion"):
        _add_schedule_flags(x, prefix)
    x.add_argument("--batch-size", type=_positive_int)
    x.add_argument("--filters", type=_positive_int)
    x.add_argument("--hidden", type=_positive_int, nargs=2, metavar=("H1", "H2"))
    x.add_argument("--width", type=_positive_int)
    x.add_argument("--no-neural", action="store_true", help="skip the fusion-head protocol")
    x.add_argument("--parallel", type=_positive_int, default=1, help="worker processes")
    _add_counts_flag(x)
    x.add_argument("--out", type=Path, required=True)

    f = sub.add_parser("fuse", allow_abbrev=False, help="Bayesian fusion of two posterior files")
    f.add_argument("--p1", type=Path, required=True)
    f.add_argument("--p2", type=Path, required=True)
    f.add_argument("--prior", type=Path, help="default: uniform")
    f.add_argument("--out", type=Path, help="also write fused.csv here")
    return parser


# -- helpers --------------------------------------------------------------------

def _preset(name: str) -> ExperimentConfig:
    return ExperimentConfig.desk() if name == "desk" else ExperimentConfig.published()


def _override(schedule: TrainSchedule, epochs, lr, batch_size, shuffle_seed=None) -> TrainSchedule:
    return TrainSchedule(
        schedule.epochs if epochs is None else epochs,
        schedule.learning_rate if lr is None else lr,
        schedule.batch_size if batch_size is None else batch_size,
        schedule.shuffle_seed if shuffle_seed is None else shuffle_seed,
    )


def _experiment_config(args) -> ExperimentConfig:
    cfg = _preset(args.preset)
    changes = {
        f"{m}_schedule": _override(
            getattr(cfg, f"{m}_schedule"), getattr(args, f"{m}_epochs"), getattr(args, f"{m}_lr"), args.batch_size
        )
        for m in ("tactile", "kinesthetic", "fusion")
    }
    if args.filters:
        changes["tactile_filters"] = args.filters
    if args.hidden:
        changes["kinesthetic_hidden"] = tuple(args.hidden)
    if args.width:
        changes["fusion_width"] = args.width
    changes["neural"] = not args.no_neural
    changes["counts"] = _counts(args)
    return replace(cfg, **changes)


def _read_vector(path: Path) -> np.ndarray:
    text = path.read_text(encoding="utf-8").replace(",", " ")
    try:
        return np.array([float(tok) for tok in text.split()])
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: not a list of numbers ({exc})") from exc


def _fmt(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _plan_dict(plan) -> dict:
    return {
        "protocol": plan.protocol,
        "seed": plan.seed,
        **{part: [list(ix) for ix in getattr(plan, part)] for part in ("train", "val", "fusion_train", "test")},
    }


# -- subcommands ------------------------------------------------------------------

def cmd_gen(args) -> None:
    cfg = SyntheticConfig(
        classes=args.classes, grasps_per_class=args.grasps, frames=args.frames,
        samples=args.samples, noise=args.noise, seed=args.seed,
    )
    path = save_dataset(gen_synthetic(cfg), args.out)
    print(path)


def cmd_convert(args) -> None:
    print(convert_upstream(args.src, args.out))


def cmd_train(args) -> None:
    cfg = _experiment_config_for_train(args)
    ds = load_dataset(args.data)
    counts = _counts(args)
    shuffle = args.seed if args.shuffle_seed is None else args.shuffle_seed
    args.out.mkdir(parents=True, exist_ok=True)
    if args.model == "fusion":
        if args.protocol != "neural":
            raise UsageError("the fusion head is trained on the neural protocol (--protocol neural)")
        if args.tactile is None or args.kinesthetic is None:
            raise UsageError("fusion head training needs --tactile and --kinesthetic checkpoints")
        plan = make_split(ds, "neural", args.seed, counts)
        models = BaseModels(load_params(args.tactile), load_params(args.kinesthetic), normalize(ds, plan), plan)
        fuse_ix = plan.flat("fusion_train")
        p1, p2 = base_posteriors(models, fuse_ix)
        schedule = _override(cfg.fusion_schedule, args.epochs, args.lr, args.batch_size, shuffle)
        params, history = train_fusion_head(p1, p2, ds.label_batch(fuse_ix), schedule, args.seed, cfg.fusion_width)
    else:
        plan = make_split(ds, args.protocol, args.seed, counts)
        tac_spec, kin_spec = cfg.specs(ds.n_classes)
        spec = tac_spec if args.model == "tactile" else kin_spec
        base = getattr(cfg, f"{args.model}_schedule")
        schedule = _override(base, args.epochs, args.lr, args.batch_size, shuffle)
        params, history = train_classifier(spec, normalize(ds, plan), plan, schedule, args.seed)
    save_params(args.out / "model.hfz", params)
    history.write_csv(args.out / "history.csv")
    _write_json(args.out / "split.json", _plan_dict(plan))
    print(args.out / "model.hfz")


def _experiment_config_for_train(args) -> ExperimentConfig:
    cfg = _preset(args.preset)
    changes = {}
    if args.filters:
        changes["tactile_filters"] = args.filters
    if args.hidden:
        changes["kinesthetic_hidden"] = tuple(args.hidden)
    if args.width:
        changes["fusion_width"] = args.width
    return replace(cfg, **changes)


def cmd_eval(args) -> None:
    ds = load_dataset(args.data)
    tac, kin = load_params(args.tactile), load_params(args.kinesthetic)
    if model_kind(tac) != "tactile" or model_kind(kin) != "kinesthetic":
        raise UsageError("--tactile/--kinesthetic checkpoints hold the wrong model kinds")
    head = load_params(args.fusion) if args.fusion else None
    report = evaluate_checkpoints(ds, args.protocol, args.seed, tac, kin, head, _counts(args))
    for path in report.write(args.out):
        print(path)


def cmd_experiment(args) -> None:
    cfg = _experiment_config(args)
    ds = load_dataset(args.data)
    report = run_experiment(ds, cfg, args.runs, args.seed, parallel=args.parallel)
    paths = report.write(args.out)
    _write_json(args.out / "config.json", {"runs": args.runs, "base_seed": args.seed, **cfg.to_dict()})
    for c in report.classifiers:
        print(f"{c}: mean {report.summary(c)['mean']:.4f}")
    for path in paths:
        print(path)


def cmd_fuse(args) -> None:
    p1 = check_distribution(_read_vector(args.p1), "p1")
    p2 = check_distribution(_read_vector(args.p2), "p2")
    prior = check_distribution(_read_vector(args.prior), "prior") if args.prior else uniform_prior(p1.size)
    fused = bayes_fuse(p1, p2, prior)
    text = f"{_fmt(fused)}\n{map_class(fused)}\n"
    sys.stdout.write(text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "fused.csv").write_text(text, encoding="utf-8")


COMMANDS = {
    "gen": cmd_gen,
    "convert": cmd_convert,
    "train": cmd_train,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
    "fuse": cmd_fuse,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage line
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"hapticfusion {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DatasetFormatError, TrainingError, ValueError) as exc:
        print(f"hapticfusion {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
