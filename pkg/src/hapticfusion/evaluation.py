"""Confusion matrices, recognition rates and the repeated train/test experiment."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, SplitCounts, SplitPlan, make_split, normalize
from .errors import InvalidArgumentError, TrainingError
from .fusion import bayes_fuse, neural_fuse_forward, uniform_prior
from .models import KinestheticModelSpec, TactileModelSpec, predict_proba
from .numerics import ModelParams
from .training import PUBLISHED_SCHEDULES, TrainSchedule, modality_inputs, train_classifier, train_fusion_head

CLASSIFIERS = ("tactile", "kinesthetic", "neural_fusion", "bayesian_fusion")


def confusion_matrix(predictions: Sequence[int], labels: Sequence[int], n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    true = np.asarray(labels, dtype=np.int64).reshape(-1)
    if pred.shape != true.shape:
        raise InvalidArgumentError(f"{pred.size} predictions for {true.size} labels")
    for name, v in (("prediction", pred), ("label", true)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise InvalidArgumentError(f"{name} index outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def recognition_rate(cm) -> float:
    cm = np.asarray(cm)
    total = cm.sum()
    if cm.size == 0 or total <= 0:
        raise InvalidArgumentError("recognition rate of an empty confusion matrix")
    return float(np.trace(cm) / total)


def row_normalize(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=np.float64)
    totals = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, totals, out=np.zeros_like(cm), where=totals > 0)


def quartiles(values) -> tuple[float, float, float]:
    """(Q1, median, Q3); the median is left out of both halves when the count is odd."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0:
        raise InvalidArgumentError("quartiles of an empty sample")
    med = float(np.median(x))
    if n == 1:
        return med, med, med
    half = n // 2
    lower, upper = x[:half], x[n - half:]
    return float(np.median(lower)), med, float(np.median(upper))


# -- experiment --------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    tactile_filters: int = 8
    tactile_kernel: tuple[int, int] = (3, 3)
    kinesthetic_hidden: tuple[int, int] = (32, 32)
    fusion_width: int = 64
    tactile_schedule: TrainSchedule = PUBLISHED_SCHEDULES["tactile"]
    kinesthetic_schedule: TrainSchedule = PUBLISHED_SCHEDULES["kinesthetic"]
    fusion_schedule: TrainSchedule = PUBLISHED_SCHEDULES["fusion"]
    counts: SplitCounts = SplitCounts()
    neural: bool = True  # also run the learned fusion head protocol

    @classmethod
    def published(cls) -> "ExperimentConfig":
        """Published schedules; unreported widths keep the library defaults."""
        return cls()

    @classmethod
    def desk(cls) -> "ExperimentConfig":
        """Single-core preset for the synthetic generator (minutes, not hours).

        Fewer epochs at larger steps than the published schedules; the fusion
        head sees 6x fewer mini-batches per epoch, hence its larger step.
        """
        return cls(
            tactile_filters=4,
            kinesthetic_hidden=(16, 16),
            tactile_schedule=TrainSchedule(10, 3e-3, 8),
            kinesthetic_schedule=TrainSchedule(300, 3e-3, 8),
            fusion_schedule=TrainSchedule(200, 1e-3, 8),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def specs(self, n_classes: int):
        tac = TactileModelSpec(n_classes, self.tactile_filters, self.tactile_kernel)
        kin = KinestheticModelSpec(n_classes, *self.kinesthetic_hidden)
        return tac, kin

    @property
    def classifiers(self) -> tuple[str, ...]:
        return CLASSIFIERS if self.neural else tuple(c for c in CLASSIFIERS if c != "neural_fusion")


def _derived_seed(seed: int, *tag: int) -> int:
    return int(np.random.SeedSequence([seed, *tag]).generate_state(1)[0])


def _with_shuffle(schedule: TrainSchedule, seed: int) -> TrainSchedule:
    return TrainSchedule(schedule.epochs, schedule.learning_rate, schedule.batch_size, seed)


@dataclass
class BaseModels:
    tactile: ModelParams
    kinesthetic: ModelParams
    dataset: Dataset  # normalised with the plan's statistics
    plan: SplitPlan


def train_base_models(ds: Dataset, plan: SplitPlan, config: ExperimentConfig, seed: int) -> BaseModels:
    nds = normalize(ds, plan)
    tac_spec, kin_spec = config.specs(ds.n_classes)
    tag = 0 if plan.protocol == "bayesian" else 10
    tac, _ = train_classifier(
        tac_spec, nds, plan, _with_shuffle(config.tactile_schedule, _derived_seed(seed, tag + 1)),
        _derived_seed(seed, tag + 2),
    )
    kin, _ = train_classifier(
        kin_spec, nds, plan, _with_shuffle(config.kinesthetic_schedule, _derived_seed(seed, tag + 3)),
        _derived_seed(seed, tag + 4),
    )
    return BaseModels(tac, kin, nds, plan)


def base_posteriors(models: BaseModels, indices: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    ds = models.dataset
    return (
        predict_proba(models.tactile, modality_inputs(ds, "tactile", indices)),
        predict_proba(models.kinesthetic, modality_inputs(ds, "kinesthetic", indices)),
    )


@dataclass
class RunResult:
    run: int
    seed: int
    rates: dict[str, float]
    confusion: dict[str, np.ndarray]
    test_ids: tuple[str, ...]


def run_once(ds: Dataset, config: ExperimentConfig, run: int, seed: int) -> RunResult:
    bplan = make_split(ds, "bayesian", seed, config.counts)
    test_ix = bplan.flat("test")
    n = ds.n_classes
    try:
        bayes_models = train_base_models(ds, bplan, config, seed)
        p_tac, p_kin = base_posteriors(bayes_models, test_ix)
        posteriors = {
            "tactile": p_tac,
            "kinesthetic": p_kin,
            "bayesian_fusion": bayes_fuse(p_tac, p_kin, uniform_prior(n)),
        }
        if config.neural:
            nplan = make_split(ds, "neural", seed, config.counts)
            if nplan.flat("test") != test_ix:
                raise AssertionError("protocols disagree on the test grasps")
            neural_models = train_base_models(ds, nplan, config, seed)
            fuse_ix = nplan.flat("fusion_train")
            f1, f2 = base_posteriors(neural_models, fuse_ix)
            head, _ = train_fusion_head(
                f1, f2, ds.label_batch(fuse_ix),
                _with_shuffle(config.fusion_schedule, _derived_seed(seed, 21)),
                _derived_seed(seed, 22), width=config.fusion_width,
            )
            t1, t2 = base_posteriors(neural_models, test_ix)
            posteriors["neural_fusion"] = neural_fuse_forward(t1, t2, head)
    except TrainingError as exc:
        raise TrainingError(f"run {run} (seed {seed}): {exc}", exc.epoch, exc.batch) from exc
    return _score(ds, posteriors, test_ix, config.classifiers, run, seed)


def _score(ds: Dataset, posteriors: dict, test_ix, classifiers, run: int, seed: int) -> RunResult:
    labels = ds.label_batch(test_ix)
    confusion, rates = {}, {}
    for name in classifiers:
        cm = confusion_matrix(posteriors[name].argmax(axis=1), labels, ds.n_classes)
        confusion[name] = cm
        rates[name] = recognition_rate(cm)
    return RunResult(run, seed, rates, confusion, tuple(ds.grasps[i].grasp_id for i in test_ix))


def evaluate_checkpoints(
    ds: Dataset,
    protocol: str,
    seed: int,
    tactile: ModelParams,
    kinesthetic: ModelParams,
    fusion_head: ModelParams | None = None,
    counts: SplitCounts | None = None,
) -> "ExperimentReport":
    """Score trained models on the test grasps of ``make_split(ds, protocol, seed)``.

    Inputs are normalised with that plan's training statistics, which is what
    the models saw when trained on the same plan.
    """
    plan = make_split(ds, protocol, seed, counts)
    nds = normalize(ds, plan)
    test_ix = plan.flat("test")
    models = BaseModels(tactile, kinesthetic, nds, plan)
    p_tac, p_kin = base_posteriors(models, test_ix)
    posteriors = {
        "tactile": p_tac,
        "kinesthetic": p_kin,
        "bayesian_fusion": bayes_fuse(p_tac, p_kin, uniform_prior(ds.n_classes)),
    }
    classifiers = ("tactile", "kinesthetic", "bayesian_fusion")
    if fusion_head is not None:
        posteriors["neural_fusion"] = neural_fuse_forward(p_tac, p_kin, fusion_head)
        classifiers = CLASSIFIERS
    return ExperimentReport(ds.class_names, classifiers, [_score(ds, posteriors, test_ix, classifiers, 0, seed)])


def _run_star(args):
    return run_once(*args)


@dataclass
class ExperimentReport:
    class_names: tuple[str, ...]
    classifiers: tuple[str, ...]
    runs: list[RunResult] = field(default_factory=list)

    def rates(self, name: str) -> np.ndarray:
        return np.array([r.rates[name] for r in self.runs])

    def summary(self, name: str) -> dict[str, float]:
        x = self.rates(name)
        q1, med, q3 = quartiles(x)
        return {
            "mean": float(x.mean()),
            "std": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "q1": q1,
            "median": med,
            "q3": q3,
            "min": float(x.min()),
            "max": float(x.max()),
        }

    def mean_confusion(self, name: str) -> np.ndarray:
        """Average of per-run row-normalised matrices."""
        return np.mean([row_normalize(r.confusion[name]) for r in self.runs], axis=0)

    def rates_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "seed", *self.classifiers])
        for r in self.runs:
            w.writerow([r.run, r.seed, *(repr(r.rates[c]) for c in self.classifiers)])
        return buf.getvalue()

    def report_text(self) -> str:
        lines = [f"runs: {len(self.runs)}", f"classes: {len(self.class_names)}", "", "[summary]"]
        keys = ("mean", "std", "q1", "median", "q3", "min", "max")
        lines.append(",".join(("classifier",) + keys))
        for c in self.classifiers:
            s = self.summary(c)
            lines.append(",".join([c] + [repr(s[k]) for k in keys]))
        for c in self.classifiers:
            lines += ["", f"[confusion {c}]", ",".join(("target\\estimate",) + self.class_names)]
            for name, row in zip(self.class_names, self.mean_confusion(c)):
                lines.append(",".join([name] + [repr(float(v)) for v in row]))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "rates.csv", out / "report.txt"]
        paths[0].write_text(self.rates_csv(), encoding="utf-8")
        paths[1].write_text(self.report_text(), encoding="utf-8")
        return paths


def run_experiment(
    ds: Dataset, config: ExperimentConfig, n_runs: int, base_seed: int, parallel: int = 1
) -> ExperimentReport:
    """Repeat split/train/test ``n_runs`` times; run r uses seed ``base_seed + r``."""
    if n_runs < 1:
        raise InvalidArgumentError(f"n_runs must be >= 1, got {n_runs}")
    if parallel < 1:
        raise InvalidArgumentError(f"parallel must be >= 1, got {parallel}")
    jobs = [(ds, config, r, base_seed + r) for r in range(n_runs)]
    if parallel == 1:
        results = [_run_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_star, jobs))
    results.sort(key=lambda r: r.run)
    return ExperimentReport(ds.class_names, config.classifiers, results)
