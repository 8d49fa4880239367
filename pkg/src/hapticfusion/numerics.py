"""Dense layers, activations, loss, Adam and finite-difference checking.

Everything here works on float64 numpy arrays. Model parameters are plain
``dict[str, np.ndarray]`` mappings ("ModelParams"); gradients use the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from .errors import InvalidArgumentError

ModelParams = Dict[str, np.ndarray]

LOSS_EPS = 1e-12


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    """Softmax over the last axis, stabilised by subtracting the row maximum."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise InvalidArgumentError("softmax needs at least one logit")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("softmax logits must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(pred, label: int) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 1:
        raise InvalidArgumentError(f"expected a 1-D distribution, got shape {pred.shape}")
    if not 0 <= label < pred.shape[0]:
        raise InvalidArgumentError(f"label {label} out of range for {pred.shape[0]} classes")
    p = pred[label]
    if p == 1.0:
        return 0.0
    return float(-np.log(p + LOSS_EPS))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of ``softmax(logits)`` and its gradient w.r.t. the logits.

    ``logits`` is [B, N], ``labels`` an int array [B]. The gradient uses the
    fused form (probs - onehot) / B.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise InvalidArgumentError(
            f"logits {logits.shape} and labels {labels.shape} do not form a batch"
        )
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidArgumentError(f"labels out of range for {n_classes} classes")
    probs = softmax(logits)
    batch = logits.shape[0]
    picked = probs[np.arange(batch), labels]
    losses = np.where(picked == 1.0, 0.0, -np.log(picked + LOSS_EPS))
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch
    return float(losses.mean()), dlogits, probs


def dense_forward(x, w, b):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise InvalidArgumentError(
            f"dense layer {w.shape} + bias {b.shape} cannot take input {x.shape}"
        )
    return x @ w + b


def dense_backward(x, w, dout):
    """Return (dx, dw, db) for ``out = x @ w + b`` with x of shape [B, in]."""
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray

    def forward(self, x):
        return dense_forward(x, self.weights, self.bias)

    def backward(self, x, dout):
        return dense_backward(x, self.weights, dout)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)]."""
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class AdamState:
    first_moment: ModelParams
    second_moment: ModelParams
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
            0,
        )


def adam_step(
    params: ModelParams,
    grads: ModelParams,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if lr < 0:
        raise InvalidArgumentError(f"learning rate must be non-negative, got {lr}")
    if set(params) != set(grads) or set(params) != set(state.first_moment):
        raise InvalidArgumentError("params, grads and optimizer state have different keys")
    t = state.step_count + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m_prev = state.first_moment[name]
        v_prev = state.second_moment[name]
        if g.shape != p.shape or m_prev.shape != p.shape or v_prev.shape != p.shape:
            raise InvalidArgumentError(
                f"shape mismatch for {name!r}: param {p.shape}, grad {g.shape}, "
                f"moments {m_prev.shape}/{v_prev.shape}"
            )
        m = beta1 * m_prev + (1.0 - beta1) * g
        v = beta2 * v_prev + (1.0 - beta2) * (g * g)
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t)


def _relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def numerical_gradient(loss_fn: Callable, params, h: float = 1e-5):
    """Central-difference gradient of ``loss_fn`` at ``params`` (dict or array)."""
    if h <= 0:
        raise InvalidArgumentError(f"step h must be positive, got {h}")
    if isinstance(params, dict):
        work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
        out = {}
        for name, arr in work.items():
            g = np.zeros_like(arr)
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = loss_fn(work)
                flat[i] = orig - h
                f_minus = loss_fn(work)
                flat[i] = orig
                gflat[i] = (f_plus - f_minus) / (2.0 * h)
            out[name] = g
        return out
    arr = np.array(params, dtype=np.float64, copy=True)
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss_fn(arr)
        flat[i] = orig - h
        f_minus = loss_fn(arr)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return g


def finite_diff_check(loss_fn: Callable, analytic_grads, params, h: float = 1e-5) -> float:
    """Largest per-coordinate relative error between analytic and numerical gradients.

    Relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    numeric = numerical_gradient(loss_fn, params, h)
    if isinstance(params, dict):
        if set(analytic_grads) != set(numeric):
            raise InvalidArgumentError("analytic gradients do not cover the same parameters")
        errs = [
            _relative_error(np.asarray(analytic_grads[k], dtype=np.float64), numeric[k]).max(initial=0.0)
            for k in numeric
        ]
        return float(max(errs, default=0.0))
    analytic = np.asarray(analytic_grads, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise InvalidArgumentError(f"gradient shape {analytic.shape} != params {numeric.shape}")
    return float(_relative_error(analytic, numeric).max(initial=0.0))
