"""Mini-batch Adam training for the base classifiers and the fusion head."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, SplitPlan
from .errors import InvalidArgumentError, TrainingError
from .fusion import FusionHeadSpec, fusion_loss_and_grads, neural_fuse_forward
from .models import loss_and_grads, predict_proba
from .numerics import AdamState, ModelParams, adam_step, cross_entropy


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int
    learning_rate: float
    batch_size: int = 8
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise InvalidArgumentError(f"learning rate must be finite and >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch size must be positive, got {self.batch_size}")


# Published schedules for the full-size dataset.
PUBLISHED_SCHEDULES = {
    "tactile": TrainSchedule(epochs=30, learning_rate=1e-4),
    "kinesthetic": TrainSchedule(epochs=700, learning_rate=1e-5),
    "fusion": TrainSchedule(epochs=200, learning_rate=1e-4),
}


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for e, row in enumerate(zip(self.train_loss, self.val_loss, self.val_acc), start=1):
            w.writerow([e, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def _mean_ce(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean([cross_entropy(p, int(y)) for p, y in zip(probs, labels)]))


def _fit(
    params: ModelParams,
    n_train: int,
    batch_loss: Callable[[ModelParams, np.ndarray], tuple[float, ModelParams]],
    validate: Callable[[ModelParams], tuple[float, float]] | None,
    schedule: TrainSchedule,
) -> tuple[ModelParams, TrainHistory]:
    """Shared loop. The recorded training loss is the sample-weighted mean of the
    epoch's mini-batch losses (with a single full batch it is the loss at the
    start of the epoch). Keeps the parameters of the best validation-accuracy epoch
    (ties go to the later epoch); without validation keeps the last epoch."""
    history = TrainHistory()
    shuffle_rng = np.random.default_rng(schedule.shuffle_seed)
    state = AdamState.zeros_like(params)
    best = params
    best_acc = -np.inf
    for epoch in range(1, schedule.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        total = 0.0
        for b, start in enumerate(range(0, n_train, schedule.batch_size)):
            idx = order[start:start + schedule.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    loss, grads = batch_loss(params, idx)
                except InvalidArgumentError as exc:
                    if state.step_count == 0:
                        raise
                    # inputs were accepted before the first update, so this is an overflow
                    raise TrainingError(f"diverged at epoch {epoch}, batch {b}: {exc}", epoch, b) from exc
                if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, batch {b}", epoch, b)
                total += loss * len(idx)
                params, state = adam_step(params, grads, state, schedule.learning_rate)
        history.train_loss.append(total / n_train)
        if validate is None:
            history.val_loss.append(float("nan"))
            history.val_acc.append(float("nan"))
            best, history.best_epoch = params, epoch
            continue
        v_loss, v_acc = validate(params)
        history.val_loss.append(v_loss)
        history.val_acc.append(v_acc)
        if v_acc >= best_acc:
            best, best_acc, history.best_epoch = params, v_acc, epoch
    return best, history


def modality_inputs(ds: Dataset, kind: str, indices) -> np.ndarray:
    if kind == "tactile":
        return ds.tactile_batch(indices)
    if kind == "kinesthetic":
        return ds.kinesthetic_batch(indices)
    raise InvalidArgumentError(f"no input modality for model kind {kind!r}")


def train_classifier(spec, ds: Dataset, plan: SplitPlan, schedule: TrainSchedule, init_seed: int):
    """Train a tactile or kinesthetic classifier on ``plan.train``, selecting on ``plan.val``.

    ``ds`` should already be normalised. Returns ``(params, history)``.
    """
    if spec.n_classes != ds.n_classes:
        raise InvalidArgumentError(f"model has {spec.n_classes} classes, dataset has {ds.n_classes}")
    train_ix, val_ix = plan.flat("train"), plan.flat("val")
    if not train_ix:
        raise InvalidArgumentError("split plan has no training grasps")
    if max(train_ix + val_ix) >= len(ds.grasps):
        raise InvalidArgumentError("split plan refers to grasps outside the dataset")
    X = modality_inputs(ds, spec.kind, train_ix)
    y = ds.label_batch(train_ix)
    params = spec.init_params(np.random.default_rng(init_seed))

    validate = None
    if val_ix:
        Xv, yv = modality_inputs(ds, spec.kind, val_ix), ds.label_batch(val_ix)

        def validate(p):
            probs = predict_proba(p, Xv)
            return _mean_ce(probs, yv), float(np.mean(probs.argmax(axis=1) == yv))

    return _fit(params, len(y), lambda p, idx: loss_and_grads(p, X[idx], y[idx]), validate, schedule)


def train_fusion_head(p1s, p2s, labels, schedule: TrainSchedule, init_seed: int, width: int = 64):
    """Fit the fusion head on posterior pairs from frozen base models."""
    P1 = np.asarray(p1s, dtype=np.float64)
    P2 = np.asarray(p2s, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if P1.ndim != 2 or P1.shape[0] == 0:
        raise InvalidArgumentError("fusion training needs a non-empty [B, N] stack of posteriors")
    if P1.shape != P2.shape or y.shape != (P1.shape[0],):
        raise InvalidArgumentError(f"mismatched fusion inputs: {P1.shape}, {P2.shape}, {y.shape}")
    params = FusionHeadSpec(P1.shape[1], width).init_params(np.random.default_rng(init_seed))
    return _fit(
        params,
        len(y),
        lambda p, idx: fusion_loss_and_grads(p, P1[idx], P2[idx], y[idx]),
        None,
        schedule,
    )


def fusion_head_predict(params: ModelParams, P1, P2) -> np.ndarray:
    return neural_fuse_forward(P1, P2, params)
