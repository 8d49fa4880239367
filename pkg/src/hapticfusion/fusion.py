"""Late fusion of two categorical posteriors.

Two routes: the closed-form Bayesian rule, fused[j] ∝ p1[j] * p2[j] / prior[j]
under conditional independence of the modalities given the class, and a small
learned network that takes the concatenated posteriors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import (
    ModelParams,
    dense_backward,
    dense_forward,
    relu,
    softmax,
    softmax_cross_entropy,
    uniform_init,
)

FUSE_EPS = 1e-12
DIST_TOL = 1e-6


def check_distribution(p, name: str = "distribution", tol: float = DIST_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidArgumentError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > tol:
        raise InvalidArgumentError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def uniform_prior(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def bayes_fuse(p1, p2, prior=None) -> np.ndarray:
    """Fused posterior of two conditionally independent classifiers.

    Accumulates in log space; p1 and p2 are floored at 1e-12 before the log so
    exact zeros never produce -inf. ``prior`` defaults to uniform and must be
    strictly positive.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape or p1.ndim < 1:
        raise InvalidArgumentError(f"posterior shapes differ: {p1.shape} vs {p2.shape}")
    n = p1.shape[-1]
    prior = uniform_prior(n) if prior is None else np.asarray(prior, dtype=np.float64)
    if prior.shape != (n,):
        raise InvalidArgumentError(f"prior has shape {prior.shape}, expected ({n},)")
    if np.any(prior <= 0):
        raise InvalidArgumentError("prior must be strictly positive")
    if np.any(p1 < 0) or np.any(p2 < 0):
        raise InvalidArgumentError("posteriors must be non-negative")
    log_joint = np.log(np.maximum(p1, FUSE_EPS)) + np.log(np.maximum(p2, FUSE_EPS)) - np.log(prior)
    return softmax(log_joint)


def map_class(p) -> int:
    """Index of the largest probability; ties go to the lowest index."""
    p = check_distribution(p, "posterior")
    return int(np.argmax(p))


# -- neural fusion head -------------------------------------------------------

@dataclass(frozen=True)
class FusionHeadSpec:
    n_classes: int
    width: int = 64

    kind = "fusion"

    def init_params(self, rng: np.random.Generator) -> ModelParams:
        n, w = self.n_classes, self.width
        return {
            "fc1.w": uniform_init(rng, (2 * n, w), 2 * n),
            "fc1.b": np.zeros(w),
            "fc2.w": uniform_init(rng, (w, w), w),
            "fc2.b": np.zeros(w),
            "fc3.w": uniform_init(rng, (w, n), w),
            "fc3.b": np.zeros(n),
        }


def _fusion_input(p1, p2, params):
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise InvalidArgumentError(f"posterior shapes differ: {p1.shape} vs {p2.shape}")
    n = params["fc3.b"].shape[0]
    if p1.shape[-1] != n or params["fc1.w"].shape[0] != 2 * n:
        raise InvalidArgumentError(
            f"fusion head is for {n} classes, got posteriors of length {p1.shape[-1]}"
        )
    return np.concatenate([p1, p2], axis=-1)


def _fusion_logits(params, v):
    a1 = dense_forward(v, params["fc1.w"], params["fc1.b"])
    r1 = relu(a1)
    a2 = dense_forward(r1, params["fc2.w"], params["fc2.b"])
    r2 = relu(a2)
    logits = dense_forward(r2, params["fc3.w"], params["fc3.b"])
    return logits, (v, a1, r1, a2, r2)


def neural_fuse_forward(p1, p2, params: ModelParams) -> np.ndarray:
    """Fused posterior from the learned head; works on single vectors or [B, N] batches."""
    v = _fusion_input(p1, p2, params)
    return softmax(_fusion_logits(params, v)[0])


def fusion_loss_and_grads(params: ModelParams, P1, P2, y) -> tuple[float, ModelParams]:
    v = _fusion_input(P1, P2, params)
    if v.ndim != 2 or v.shape[0] == 0:
        raise InvalidArgumentError("fusion batch must be a non-empty [B, N] stack")
    logits, (v, a1, r1, a2, r2) = _fusion_logits(params, v)
    loss, d3, _ = softmax_cross_entropy(logits, y)
    dr2, dw3, db3 = dense_backward(r2, params["fc3.w"], d3)
    da2 = dr2 * (a2 > 0)
    dr1, dw2, db2 = dense_backward(r1, params["fc2.w"], da2)
    da1 = dr1 * (a1 > 0)
    _, dw1, db1 = dense_backward(v, params["fc1.w"], da1)
    return loss, {"fc1.w": dw1, "fc1.b": db1, "fc2.w": dw2, "fc2.b": db2, "fc3.w": dw3, "fc3.b": db3}
