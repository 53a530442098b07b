from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from models.errors import ShapeError


@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so large |z| never overflows exp
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logsumexp(a: np.ndarray, axis: Optional[int] = None) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return out.reshape(())
    return np.squeeze(out, axis=axis)


# -- affine ---------------------------------------------------------------------------------


def affine(x: np.ndarray, W: Parameter, b: Parameter) -> np.ndarray:
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"affine {W.name}: input {x.shape} vs weights {W.shape}, bias {b.shape}")
    return x @ W.value + b.value


def affine_backward(x: np.ndarray, W: Parameter, b: Parameter, dy: np.ndarray) -> np.ndarray:
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    W.grad += x2.T @ dy2
    b.grad += dy2.sum(axis=0)
    return dy @ W.value.T


@dataclass
class Dense:
    W: Parameter
    b: Parameter

    @staticmethod
    def create(name: str, d_in: int, d_out: int, rng: np.random.Generator) -> "Dense":
        return Dense(
            W=Parameter(f"{name}.W", uniform_init(rng, (d_in, d_out), d_in)),
            b=Parameter(f"{name}.b", np.zeros(d_out)),
        )

    def parameters(self) -> List[Parameter]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return affine(x, self.W, self.b)

    def backward(self, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        return affine_backward(x, self.W, self.b, dy)


# -- LSTM -----------------------------------------------------------------------------------


@dataclass
class LstmParams:
    """Row-vector layout: gates = x @ W + h @ U + b with W (d, 4h) and U (h, 4h)."""

    W: Parameter
    U: Parameter
    b: Parameter

    @staticmethod
    def create(name: str, d_in: int, hidden: int, rng: np.random.Generator) -> "LstmParams":
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        return LstmParams(
            W=Parameter(f"{name}.W", uniform_init(rng, (d_in, 4 * hidden), d_in)),
            U=Parameter(f"{name}.U", uniform_init(rng, (hidden, 4 * hidden), hidden)),
            b=Parameter(f"{name}.b", bias),
        )

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.W, self.U, self.b]


def _gates(z: np.ndarray, h: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    i = sigmoid(z[..., :h])
    f = sigmoid(z[..., h:2 * h])
    g = np.tanh(z[..., 2 * h:3 * h])
    o = sigmoid(z[..., 3 * h:])
    return i, f, g, o


def lstm_step(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LstmParams
) -> Tuple[np.ndarray, np.ndarray]:
    h = params.hidden
    if x.shape[-1] != params.input_dim or h_prev.shape[-1] != h or c_prev.shape[-1] != h:
        raise ShapeError(
            f"lstm_step: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} vs input {params.input_dim}, hidden {h}"
        )
    z = x @ params.W.value + h_prev @ params.U.value + params.b.value
    i, f, g, o = _gates(z, h)
    c = f * c_prev + i * g
    return o * np.tanh(c), c


@dataclass
class _LstmTrace:
    x: np.ndarray
    mask: np.ndarray
    h_prev: List[np.ndarray]
    c_prev: List[np.ndarray]
    acts: List[Tuple[np.ndarray, ...]]


def lstm_forward(x: np.ndarray, mask: np.ndarray, params: LstmParams) -> Tuple[np.ndarray, _LstmTrace]:
    """Left-to-right pass over a padded batch (B, T, d); masked steps emit zeros and carry state."""
    B, T, _ = x.shape
    h = params.hidden
    W = params.W.value
    U = params.U.value
    bias = params.b.value
    h_t = np.zeros((B, h))
    c_t = np.zeros((B, h))
    out = np.zeros((B, T, h))
    trace = _LstmTrace(x=x, mask=mask, h_prev=[], c_prev=[], acts=[])
    for t in range(T):
        # per-step products keep earlier steps bit-identical when padding is appended
        z = x[:, t] @ W + h_t @ U + bias
        i, f, g, o = _gates(z, h)
        c_new = f * c_t + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        trace.h_prev.append(h_t)
        trace.c_prev.append(c_t)
        trace.acts.append((i, f, g, o, tc))
        m = mask[:, t][:, None]
        h_t = np.where(m, h_new, h_t)
        c_t = np.where(m, c_new, c_t)
        out[:, t] = np.where(m, h_new, 0.0)
    return out, trace


def lstm_backward(trace: _LstmTrace, d_out: np.ndarray, params: LstmParams) -> np.ndarray:
    B, T, _ = trace.x.shape
    h = params.hidden
    U = params.U.value
    dh_next = np.zeros((B, h))
    dc_next = np.zeros((B, h))
    dgx = np.zeros((B, T, 4 * h))
    for t in reversed(range(T)):
        m = trace.mask[:, t][:, None]
        i, f, g, o, tc = trace.acts[t]
        c_prev = trace.c_prev[t]
        dh = d_out[:, t] * m + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                dh * tc * o * (1.0 - o),
            ],
            axis=1,
        )
        dz = dz * m
        dgx[:, t] = dz
        params.U.grad += trace.h_prev[t].T @ dz
        # padded steps pass state gradients straight through
        dh_next = np.where(m, dz @ U.T, dh)
        dc_next = np.where(m, dc * f, dc_next)
    x2 = trace.x.reshape(B * T, -1)
    dgx2 = dgx.reshape(B * T, -1)
    params.W.grad += x2.T @ dgx2
    params.b.grad += dgx2.sum(axis=0)
    return dgx @ params.W.value.T


# -- bidirectional --------------------------------------------------------------------------


def check_prefix_mask(mask: np.ndarray) -> None:
    if mask.ndim != 2:
        raise ShapeError(f"mask must be (batch, time), got {mask.shape}")
    if mask.shape[1] > 1 and np.any(mask[:, 1:] & ~mask[:, :-1]):
        raise ShapeError("mask must be a true-prefix (padding only at the end)")


def _reverse_index(mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    B, T = mask.shape
    lengths = mask.sum(axis=1)
    t = np.arange(T)[None, :]
    idx = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    rows = np.repeat(np.arange(B)[:, None], T, axis=1)
    return rows, idx


@dataclass
class BiLstmTrace:
    fw: _LstmTrace
    bw: _LstmTrace
    rows: np.ndarray
    idx: np.ndarray


def bilstm_forward(
    x: np.ndarray, mask: np.ndarray, fw: LstmParams, bw: LstmParams
) -> Tuple[np.ndarray, BiLstmTrace]:
    """x is (B, T, d), mask (B, T) true-prefix; returns (B, T, 2h) with zeros under the mask."""
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError(f"bilstm: input {x.shape} vs mask {mask.shape}")
    if x.shape[2] != fw.input_dim or x.shape[2] != bw.input_dim:
        raise ShapeError(f"bilstm: input width {x.shape[2]} vs LSTM input {fw.input_dim}/{bw.input_dim}")
    mask = mask.astype(bool)
    check_prefix_mask(mask)
    out_fw, tr_fw = lstm_forward(x, mask, fw)
    rows, idx = _reverse_index(mask)
    out_rev, tr_bw = lstm_forward(x[rows, idx], mask, bw)
    out_bw = out_rev[rows, idx]
    return np.concatenate([out_fw, out_bw], axis=2), BiLstmTrace(tr_fw, tr_bw, rows, idx)


def bilstm_backward(trace: BiLstmTrace, d_out: np.ndarray, fw: LstmParams, bw: LstmParams) -> np.ndarray:
    h = fw.hidden
    dx = lstm_backward(trace.fw, d_out[:, :, :h], fw)
    d_rev = d_out[:, :, h:][trace.rows, trace.idx]
    dx_rev = lstm_backward(trace.bw, d_rev, bw)
    return dx + dx_rev[trace.rows, trace.idx]


def bilstm(
    sequence: List[np.ndarray], mask: List[bool], fw_params: LstmParams, bw_params: LstmParams
) -> List[np.ndarray]:
    """Single-sequence convenience wrapper over :func:`bilstm_forward`."""
    if len(sequence) != len(mask):
        raise ShapeError(f"bilstm: {len(sequence)} steps but {len(mask)} mask entries")
    if not sequence:
        return []
    x = np.stack([np.asarray(v, dtype=np.float64) for v in sequence])[None]
    out, _ = bilstm_forward(x, np.asarray(mask, dtype=bool)[None], fw_params, bw_params)
    return list(out[0])
