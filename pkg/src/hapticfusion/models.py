"""Tactile (ConvLSTM) and kinesthetic (stacked LSTM) classifiers.

Parameters are flat ``dict[str, ndarray]``. The architecture is recovered from
the parameter names and shapes, so forward functions need no spec object:

* tactile:     ``conv.{wx,wh,b}`` + ``head.{w,b}``
* kinesthetic: ``lstm1.*``, ``lstm2.*`` + ``head.{w,b}``

Batched entry points take sequences stacked sample-major, ``[B, T, H, W]`` for
tactile and ``[B, K, 4]`` for kinesthetic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .numerics import ModelParams, dense_backward, dense_forward, softmax, softmax_cross_entropy, uniform_init
from .recurrent import ConvLstmCellParams, LstmCellParams, backprop, init_convlstm, init_lstm, unroll_with_tape

SENSOR_ROWS = 28
SENSOR_COLS = 50
N_JOINTS = 4


@dataclass(frozen=True)
class TactileModelSpec:
    n_classes: int
    filters: int = 8
    kernel: tuple[int, int] = (3, 3)
    height: int = SENSOR_ROWS
    width: int = SENSOR_COLS

    kind = "tactile"

    def init_params(self, rng: np.random.Generator) -> ModelParams:
        conv = init_convlstm(rng, 1, self.filters, self.kernel)
        n_feat = self.height * self.width * self.filters
        params = conv.to_dict("conv")
        params["head.w"] = uniform_init(rng, (n_feat, self.n_classes), n_feat)
        params["head.b"] = np.zeros(self.n_classes)
        return params


@dataclass(frozen=True)
class KinestheticModelSpec:
    n_classes: int
    hidden1: int = 32
    hidden2: int = 32
    n_joints: int = N_JOINTS

    kind = "kinesthetic"

    def init_params(self, rng: np.random.Generator) -> ModelParams:
        params = init_lstm(rng, self.n_joints, self.hidden1).to_dict("lstm1")
        params.update(init_lstm(rng, self.hidden1, self.hidden2).to_dict("lstm2"))
        params["head.w"] = uniform_init(rng, (self.hidden2, self.n_classes), self.hidden2)
        params["head.b"] = np.zeros(self.n_classes)
        return params


def model_kind(params: ModelParams) -> str:
    if "conv.wx" in params:
        return "tactile"
    if "lstm1.wx" in params:
        return "kinesthetic"
    if "fc1.w" in params:
        return "fusion"
    raise InvalidArgumentError(f"unrecognised parameter set: {sorted(params)}")


def n_classes_of(params: ModelParams) -> int:
    key = "head.b" if "head.b" in params else "fc3.b"
    return params[key].shape[0]


# -- tactile -----------------------------------------------------------------

def _tactile_forward_batch(params, X):
    conv = ConvLstmCellParams.from_dict(params, "conv")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise InvalidArgumentError(f"tactile batch must be [B, T, H, W], got {X.shape}")
    b, t, h, w = X.shape
    if t < 1:
        raise InvalidArgumentError("tactile sequence needs at least one frame")
    n_feat = h * w * conv.filters
    if params["head.w"].shape[0] != n_feat:
        raise InvalidArgumentError(
            f"tactile frames {h}x{w} do not fit this parameter set "
            f"(head expects {params['head.w'].shape[0]} features, got {n_feat})"
        )
    seq = X.transpose(1, 0, 2, 3)[..., None]
    hs, _, tape = unroll_with_tape(conv, seq)
    feats = hs[-1].reshape(b, n_feat)
    logits = dense_forward(feats, params["head.w"], params["head.b"])
    return logits, (tape, feats, hs.shape)


def _tactile_backward(params, cache, dlogits):
    tape, feats, hs_shape = cache
    dfeats, dw, db = dense_backward(feats, params["head.w"], dlogits)
    dhs = np.zeros(hs_shape)
    dhs[-1] = dfeats.reshape(hs_shape[1:])
    res = backprop(tape, dhs, input_grads=False)
    grads = res.params.to_dict("conv")
    grads["head.w"], grads["head.b"] = dw, db
    return grads


# -- kinesthetic -------------------------------------------------------------

def _kinesthetic_forward_batch(params, X):
    l1 = LstmCellParams.from_dict(params, "lstm1")
    l2 = LstmCellParams.from_dict(params, "lstm2")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1] < 1:
        raise InvalidArgumentError(f"kinesthetic batch must be [B, K, channels], got {X.shape}")
    if X.shape[2] != l1.n_in:
        raise InvalidArgumentError(f"kinesthetic data needs {l1.n_in} joint channels, got {X.shape[2]}")
    seq = X.transpose(1, 0, 2)
    hs1, _, tape1 = unroll_with_tape(l1, seq)
    hs2, _, tape2 = unroll_with_tape(l2, hs1)
    feats = hs2[-1]
    logits = dense_forward(feats, params["head.w"], params["head.b"])
    return logits, (tape1, tape2, feats, hs2.shape)


def _kinesthetic_backward(params, cache, dlogits):
    tape1, tape2, feats, hs_shape = cache
    dfeats, dw, db = dense_backward(feats, params["head.w"], dlogits)
    dhs2 = np.zeros(hs_shape)
    dhs2[-1] = dfeats
    r2 = backprop(tape2, dhs2, input_grads=True)
    r1 = backprop(tape1, r2.sequence, input_grads=False)
    grads = r1.params.to_dict("lstm1")
    grads.update(r2.params.to_dict("lstm2"))
    grads["head.w"], grads["head.b"] = dw, db
    return grads


_FORWARD = {"tactile": _tactile_forward_batch, "kinesthetic": _kinesthetic_forward_batch}
_BACKWARD = {"tactile": _tactile_backward, "kinesthetic": _kinesthetic_backward}


def logits_batch(params: ModelParams, X) -> np.ndarray:
    return _FORWARD[model_kind(params)](params, X)[0]


def predict_proba(params: ModelParams, X, chunk: int = 32) -> np.ndarray:
    """Posteriors [B, N] for a stacked batch, evaluated in chunks to bound memory."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros((0, n_classes_of(params)))
    parts = [softmax(logits_batch(params, X[i:i + chunk])) for i in range(0, X.shape[0], chunk)]
    return np.concatenate(parts, axis=0)


def tactile_forward(seq, params: ModelParams) -> np.ndarray:
    """Posterior over classes for one tactile sequence [T, H, W]."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 3:
        raise InvalidArgumentError(f"tactile sequence must be [T, H, W], got {seq.shape}")
    if model_kind(params) != "tactile":
        raise InvalidArgumentError("parameters are not a tactile model")
    return softmax(_tactile_forward_batch(params, seq[None])[0][0])


def kinesthetic_forward(seq, params: ModelParams) -> np.ndarray:
    """Posterior over classes for one kinesthetic sequence [K, 4]."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2:
        raise InvalidArgumentError(f"kinesthetic sequence must be [K, 4], got {seq.shape}")
    if model_kind(params) != "kinesthetic":
        raise InvalidArgumentError("parameters are not a kinesthetic model")
    return softmax(_kinesthetic_forward_batch(params, seq[None])[0][0])


def loss_and_grads(params: ModelParams, X, y) -> tuple[float, ModelParams]:
    """Mean cross-entropy over a stacked batch and its parameter gradients."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise InvalidArgumentError("empty batch")
    kind = model_kind(params)
    logits, cache = _FORWARD[kind](params, X)
    loss, dlogits, _ = softmax_cross_entropy(logits, y)
    return loss, _BACKWARD[kind](params, cache, dlogits)


def model_gradients(spec, params: ModelParams, batch: Sequence[tuple[np.ndarray, int]]):
    """Mean loss and gradients for a list of ``(sequence, label)`` pairs.

    ``spec`` may be a model spec or ``None``; the architecture is read from
    ``params`` either way.
    """
    if len(batch) == 0:
        raise InvalidArgumentError("empty batch")
    if spec is not None and spec.kind != model_kind(params):
        raise InvalidArgumentError(f"spec is {spec.kind} but parameters are {model_kind(params)}")
    X = np.stack([np.asarray(s, dtype=np.float64) for s, _ in batch])
    y = np.array([label for _, label in batch], dtype=np.int64)
    return loss_and_grads(params, X, y)


# -- checkpoints -------------------------------------------------------------

MAGIC = b"HFZ1"


def save_params(path, params: ModelParams) -> None:
    """Write parameters in the HFZ1 container (little-endian u64 headers, f64 data)."""
    chunks = [MAGIC]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise InvalidArgumentError(f"{path}: not an HFZ1 checkpoint")
    pos = 4
    params: ModelParams = {}

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise InvalidArgumentError(f"{path}: truncated checkpoint")
        out = data[pos:pos + n]
        pos += n
        return out

    while pos < len(data):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        params[name] = arr.astype(np.float64)
    return params
