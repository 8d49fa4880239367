"""LSTM and ConvLSTM cells with sequence unrolling and backpropagation through time.

Gate order everywhere is (input i, forget f, cell g, output o); no peepholes.
ConvLSTM uses stride 1 and "same" zero padding (cross-correlation, as in
most deep-learning frameworks).

Shapes are time-major: ``sequence[t]`` is the input at step ``t``, which may
carry leading batch axes. LSTM inputs are ``[..., in]``; ConvLSTM inputs are
``[H, W, C]`` or ``[B, H, W, C]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError
from .numerics import sigmoid, uniform_init


@dataclass(frozen=True)
class RecurrentState:
    hidden: np.ndarray
    cell: np.ndarray

    def __post_init__(self):
        if self.hidden.shape != self.cell.shape:
            raise InvalidArgumentError(
                f"hidden {self.hidden.shape} and cell {self.cell.shape} shapes differ"
            )


# -- convolution helpers -----------------------------------------------------

def _im2col(x, kh, kw):
    """[B, H, W, C] -> [B, H, W, kh*kw*C] patches under "same" zero padding."""
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # [B, H, W, C, kh, kw]
    b, h, w, c = x.shape
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b, h, w, kh * kw * c)


def _conv_same_input_grad(dz, kernel):
    """Gradient of :func:`conv2d_same` w.r.t. its input, given output gradient dz."""
    kh, kw, c, _ = kernel.shape
    b, h, w, _ = dz.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((b, h + 2 * ph, w + 2 * pw, c))
    for dy in range(kh):
        for dx in range(kw):
            out[:, dy:dy + h, dx:dx + w, :] += dz @ kernel[dy, dx].T
    return out[:, ph:ph + h, pw:pw + w, :]


def conv2d_same(x, kernel):
    """Stride-1 "same" cross-correlation. x [B, H, W, C], kernel [kh, kw, C, out]."""
    kh, kw, c, out = kernel.shape
    cols = _im2col(x, kh, kw)
    return cols @ kernel.reshape(kh * kw * c, out)


# -- parameters --------------------------------------------------------------

@dataclass(frozen=True)
class LstmCellParams:
    wx: np.ndarray  # [in, 4*hidden]
    wh: np.ndarray  # [hidden, 4*hidden]
    b: np.ndarray  # [4*hidden]

    def __post_init__(self):
        hidden = self.wh.shape[0]
        if hidden <= 0 or self.wh.shape != (hidden, 4 * hidden):
            raise InvalidArgumentError(f"bad hidden-to-gate weights {self.wh.shape}")
        if self.wx.ndim != 2 or self.wx.shape[1] != 4 * hidden or self.b.shape != (4 * hidden,):
            raise InvalidArgumentError(
                f"inconsistent LSTM weights wx {self.wx.shape}, wh {self.wh.shape}, b {self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    @property
    def n_in(self) -> int:
        return self.wx.shape[0]

    def to_dict(self, prefix: str) -> dict:
        return {f"{prefix}.wx": self.wx, f"{prefix}.wh": self.wh, f"{prefix}.b": self.b}

    @classmethod
    def from_dict(cls, params: dict, prefix: str) -> "LstmCellParams":
        return cls(params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"])

    def zero_state(self, batch_shape=()) -> RecurrentState:
        shape = tuple(batch_shape) + (self.hidden,)
        return RecurrentState(np.zeros(shape), np.zeros(shape))

    def _check_input(self, x):
        if x.shape[-1] != self.n_in:
            raise InvalidArgumentError(f"LSTM expects {self.n_in} input features, got shape {x.shape}")

    # gate pre-activations are split into an input part (vectorised over all
    # steps at once) and a recurrent part (one step at a time)
    def input_contrib(self, xs):
        self._check_input(xs)
        return xs @ self.wx + self.b

    def recurrent_contrib(self, h):
        return h @ self.wh

    def recurrent_backward(self, h_prev, dz):
        """Return (dwh contribution, dh_prev)."""
        dwh = h_prev.reshape(-1, self.hidden).T @ dz.reshape(-1, dz.shape[-1])
        return dwh, dz @ self.wh.T

    def input_backward(self, xs, dzs, need_dx=True):
        """Return (dwx, db, dxs) for the input part over all steps."""
        n4 = dzs.shape[-1]
        flat_dz = dzs.reshape(-1, n4)
        dwx = xs.reshape(-1, self.n_in).T @ flat_dz
        return dwx, flat_dz.sum(axis=0), (dzs @ self.wx.T if need_dx else None)

    def grads_like(self, dwx, dwh, db) -> "LstmCellParams":
        return LstmCellParams(dwx, dwh, db)


@dataclass(frozen=True)
class ConvLstmCellParams:
    wx: np.ndarray  # [kh, kw, in_ch, 4*filters]
    wh: np.ndarray  # [kh, kw, filters, 4*filters]
    b: np.ndarray  # [4*filters]

    def __post_init__(self):
        if self.wx.ndim != 4 or self.wh.ndim != 4:
            raise InvalidArgumentError("ConvLSTM kernels must be 4-D [kh, kw, in, out]")
        kh, kw, f, f4 = self.wh.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise InvalidArgumentError(f"kernel dims must be odd, got {kh}x{kw}")
        if f4 != 4 * f or self.wx.shape[:2] != (kh, kw) or self.wx.shape[3] != f4 or self.b.shape != (f4,):
            raise InvalidArgumentError(
                f"inconsistent ConvLSTM weights wx {self.wx.shape}, wh {self.wh.shape}, b {self.b.shape}"
            )

    @property
    def filters(self) -> int:
        return self.wh.shape[2]

    @property
    def in_channels(self) -> int:
        return self.wx.shape[2]

    @property
    def kernel(self) -> tuple[int, int]:
        return self.wh.shape[0], self.wh.shape[1]

    def to_dict(self, prefix: str) -> dict:
        return {f"{prefix}.wx": self.wx, f"{prefix}.wh": self.wh, f"{prefix}.b": self.b}

    @classmethod
    def from_dict(cls, params: dict, prefix: str) -> "ConvLstmCellParams":
        return cls(params[f"{prefix}.wx"], params[f"{prefix}.wh"], params[f"{prefix}.b"])

    def zero_state(self, spatial, batch_shape=()) -> RecurrentState:
        shape = tuple(batch_shape) + tuple(spatial) + (self.filters,)
        return RecurrentState(np.zeros(shape), np.zeros(shape))

    def _check_input(self, xs):
        if xs.shape[-1] != self.in_channels:
            raise InvalidArgumentError(
                f"ConvLSTM expects {self.in_channels} input channels, got shape {xs.shape}"
            )

    def input_contrib(self, xs):
        self._check_input(xs)
        lead = xs.shape[:-3]
        flat = xs.reshape((-1,) + xs.shape[-3:])
        z = conv2d_same(flat, self.wx) + self.b
        return z.reshape(lead + z.shape[1:])

    def recurrent_contrib(self, h):
        return conv2d_same(h, self.wh)

    def recurrent_backward(self, h_prev, dz):
        kh, kw = self.kernel
        f = self.filters
        cols = _im2col(h_prev, kh, kw)
        k = kh * kw * f
        dwh = (cols.reshape(-1, k).T @ dz.reshape(-1, 4 * f)).reshape(self.wh.shape)
        return dwh, _conv_same_input_grad(dz, self.wh)

    def input_backward(self, xs, dzs, need_dx=True):
        kh, kw = self.kernel
        c = self.in_channels
        lead = xs.shape[:-3]
        flat_x = xs.reshape((-1,) + xs.shape[-3:])
        flat_dz = dzs.reshape((-1,) + dzs.shape[-3:])
        k = kh * kw * c
        cols = _im2col(flat_x, kh, kw)
        n4 = flat_dz.shape[-1]
        dwx = (cols.reshape(-1, k).T @ flat_dz.reshape(-1, n4)).reshape(self.wx.shape)
        db = flat_dz.reshape(-1, n4).sum(axis=0)
        if not need_dx:
            return dwx, db, None
        dx = _conv_same_input_grad(flat_dz, self.wx)
        return dwx, db, dx.reshape(lead + dx.shape[1:])

    def grads_like(self, dwx, dwh, db) -> "ConvLstmCellParams":
        return ConvLstmCellParams(dwx, dwh, db)


CellParams = Union[LstmCellParams, ConvLstmCellParams]


def init_lstm(rng: np.random.Generator, n_in: int, hidden: int, forget_bias: float = 1.0) -> LstmCellParams:
    fan_in = n_in + hidden
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = forget_bias
    return LstmCellParams(
        uniform_init(rng, (n_in, 4 * hidden), fan_in),
        uniform_init(rng, (hidden, 4 * hidden), fan_in),
        b,
    )


def init_convlstm(
    rng: np.random.Generator,
    in_channels: int,
    filters: int,
    kernel: tuple[int, int] = (3, 3),
    forget_bias: float = 1.0,
) -> ConvLstmCellParams:
    kh, kw = kernel
    fan_in = kh * kw * (in_channels + filters)
    b = np.zeros(4 * filters)
    b[filters:2 * filters] = forget_bias
    return ConvLstmCellParams(
        uniform_init(rng, (kh, kw, in_channels, 4 * filters), fan_in),
        uniform_init(rng, (kh, kw, filters, 4 * filters), fan_in),
        b,
    )


# -- gate algebra shared by both cells ----------------------------------------

def _gates_forward(z, c_prev):
    n = z.shape[-1] // 4
    i = sigmoid(z[..., :n])
    f = sigmoid(z[..., n:2 * n])
    g = np.tanh(z[..., 2 * n:3 * n])
    o = sigmoid(z[..., 3 * n:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return (i, f, g, o, tc), c, o * tc


def _gates_backward(dh, dc, c_prev, acts):
    i, f, g, o, tc = acts
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ],
        axis=-1,
    )
    return dz, dc * f


# -- single steps ------------------------------------------------------------

def lstm_cell_step(x, state: RecurrentState, params: LstmCellParams) -> RecurrentState:
    x = np.asarray(x, dtype=np.float64)
    if state.hidden.shape[-1] != params.hidden:
        raise InvalidArgumentError(
            f"state width {state.hidden.shape[-1]} != hidden size {params.hidden}"
        )
    z = params.input_contrib(x) + params.recurrent_contrib(state.hidden)
    _, c, h = _gates_forward(z, state.cell)
    return RecurrentState(h, c)


def _as_batched_map(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidArgumentError(f"ConvLSTM input must be [H, W, C] or [B, H, W, C], got {x.shape}")


def convlstm_cell_step(x, state: RecurrentState, params: ConvLstmCellParams) -> RecurrentState:
    x, squeeze = _as_batched_map(np.asarray(x, dtype=np.float64))
    h_prev = state.hidden[None] if squeeze else state.hidden
    c_prev = state.cell[None] if squeeze else state.cell
    if h_prev.shape[:3] != x.shape[:3] or h_prev.shape[3] != params.filters:
        raise InvalidArgumentError(
            f"input {x.shape} and state {h_prev.shape} disagree spatially or in filter count"
        )
    z = params.input_contrib(x) + params.recurrent_contrib(h_prev)
    _, c, h = _gates_forward(z, c_prev)
    if squeeze:
        h, c = h[0], c[0]
    return RecurrentState(h, c)


def cell_step(params: CellParams, x, state: RecurrentState) -> RecurrentState:
    if isinstance(params, ConvLstmCellParams):
        return convlstm_cell_step(x, state, params)
    return lstm_cell_step(x, state, params)


# -- sequences ---------------------------------------------------------------

def _prepare(params: CellParams, sequence, initial):
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim < 2 or seq.shape[0] == 0:
        raise InvalidArgumentError(f"sequence must have at least one step, got shape {seq.shape}")
    squeeze = False
    if isinstance(params, ConvLstmCellParams):
        if seq.ndim == 4:
            seq, squeeze = seq[:, None], True
        elif seq.ndim != 5:
            raise InvalidArgumentError(f"ConvLSTM sequence must be [T, (B,) H, W, C], got {seq.shape}")
        if initial is None:
            initial = params.zero_state(seq.shape[2:4], (seq.shape[1],))
        elif squeeze:
            initial = RecurrentState(initial.hidden[None], initial.cell[None])
        expected = seq.shape[1:4] + (params.filters,)
    else:
        if initial is None:
            initial = params.zero_state(seq.shape[1:-1])
        expected = seq.shape[1:-1] + (params.hidden,)
    if initial.hidden.shape != expected:
        raise InvalidArgumentError(f"initial state {initial.hidden.shape} does not match {expected}")
    return seq, initial, squeeze


@dataclass
class Tape:
    """Forward activations kept for the backward pass (batched layout)."""

    params: CellParams
    sequence: np.ndarray
    initial: RecurrentState
    steps: list
    hiddens: np.ndarray
    final_cell: np.ndarray
    squeezed: bool


def _forward(params: CellParams, seq, initial, squeezed=False) -> Tape:
    zx = params.input_contrib(seq)
    h, c = initial.hidden, initial.cell
    hs = np.empty(zx.shape[:-1] + (zx.shape[-1] // 4,))
    steps = []
    for t in range(seq.shape[0]):
        z = zx[t] + params.recurrent_contrib(h)
        acts, c_new, h_new = _gates_forward(z, c)
        steps.append((h, c, acts))
        h, c = h_new, c_new
        hs[t] = h
    return Tape(params, seq, initial, steps, hs, c, squeezed)


def _final_state(tape: Tape) -> RecurrentState:
    if tape.squeezed:
        return RecurrentState(tape.hiddens[-1, 0], tape.final_cell[0])
    return RecurrentState(tape.hiddens[-1], tape.final_cell)


def unroll_with_tape(params: CellParams, sequence, initial: RecurrentState | None = None):
    """Like :func:`unroll` but also returns the tape needed by :func:`backprop`."""
    seq, init, squeeze = _prepare(params, sequence, initial)
    tape = _forward(params, seq, init, squeeze)
    hs = tape.hiddens[:, 0] if squeeze else tape.hiddens
    return hs, _final_state(tape), tape


def unroll(params: CellParams, sequence, initial: RecurrentState | None = None):
    """Run the cell over every step; returns (hidden states [T, ...], final state)."""
    hs, final, _ = unroll_with_tape(params, sequence, initial)
    return hs, final


@dataclass(frozen=True)
class BpttResult:
    params: CellParams  # gradients, same layout as the parameters
    sequence: np.ndarray | None
    initial: RecurrentState


def backprop(tape: Tape, d_hiddens, d_final_cell=None, input_grads: bool = True) -> BpttResult:
    params = tape.params
    d_hiddens = np.asarray(d_hiddens, dtype=np.float64)
    if tape.squeezed:
        d_hiddens = d_hiddens[:, None]
        if d_final_cell is not None:
            d_final_cell = np.asarray(d_final_cell)[None]
    hs = tape.hiddens
    if d_hiddens.shape != hs.shape:
        raise InvalidArgumentError(
            f"upstream gradient shape {d_hiddens.shape} does not match hidden states {hs.shape}"
        )
    dzs = np.empty(hs.shape[:-1] + (4 * hs.shape[-1],))
    dwh = np.zeros_like(params.wh)
    dh_next = np.zeros_like(tape.initial.hidden)
    if d_final_cell is None:
        dc_next = np.zeros_like(tape.initial.cell)
    else:
        dc_next = np.array(d_final_cell, dtype=np.float64)
    for t in range(len(tape.steps) - 1, -1, -1):
        h_prev, c_prev, acts = tape.steps[t]
        dz, dc_next = _gates_backward(d_hiddens[t] + dh_next, dc_next, c_prev, acts)
        dzs[t] = dz
        dwh_t, dh_next = params.recurrent_backward(h_prev, dz)
        dwh += dwh_t
    dwx, db, dseq = params.input_backward(tape.sequence, dzs, input_grads)
    grads = params.grads_like(dwx, dwh, db)
    d_init = RecurrentState(dh_next, dc_next)
    if tape.squeezed:
        dseq = None if dseq is None else dseq[:, 0]
        d_init = RecurrentState(dh_next[0], dc_next[0])
    return BpttResult(grads, dseq, d_init)


def bptt_gradients(
    params: CellParams,
    sequence,
    initial: RecurrentState | None,
    d_hiddens,
    d_final_cell=None,
    input_grads: bool = True,
) -> BpttResult:
    """Reverse-mode gradients of the unrolled cell.

    ``d_hiddens`` is the upstream gradient on every hidden state (shape of the
    first output of :func:`unroll`); ``d_final_cell`` optionally adds a
    gradient on the final cell state.
    """
    _, _, tape = unroll_with_tape(params, sequence, initial)
    return backprop(tape, d_hiddens, d_final_cell, input_grads)
