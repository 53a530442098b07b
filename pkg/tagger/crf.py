"""Linear-chain CRF over per-box emissions.

A label sequence y of length n scores

    start[y_0] + e[0, y_0] + sum_t (trans[y_{t-1}, y_t] + e[t, y_t]) + end[y_{n-1}]

and every routine here only looks at the unmasked prefix of the emissions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.errors import ShapeError
from models.invoice import NUM_LABELS
from neural.core import Parameter, logsumexp


@dataclass
class CrfParams:
    transitions: Parameter
    start: Parameter
    end: Parameter

    @staticmethod
    def create(num_labels: int = NUM_LABELS, name: str = "crf") -> "CrfParams":
        return CrfParams(
            transitions=Parameter(f"{name}.transitions", np.zeros((num_labels, num_labels))),
            start=Parameter(f"{name}.start", np.zeros(num_labels)),
            end=Parameter(f"{name}.end", np.zeros(num_labels)),
        )

    @property
    def num_labels(self) -> int:
        return self.start.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.transitions, self.start, self.end]


def _prefix_length(emissions: np.ndarray, crf: CrfParams, mask: Optional[Sequence[bool]]) -> int:
    if emissions.ndim != 2 or emissions.shape[1] != crf.num_labels:
        raise ShapeError(f"emissions {emissions.shape} vs {crf.num_labels} labels")
    if mask is None:
        n = emissions.shape[0]
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != (emissions.shape[0],):
            raise ShapeError(f"mask {m.shape} vs emissions {emissions.shape}")
        n = int(m.sum())
        if n and not np.all(m[:n]):
            raise ShapeError("mask must be a true-prefix (padding only at the end)")
    if n < 1:
        raise ShapeError("CRF needs at least one unmasked step")
    return n


def _forward(e: np.ndarray, crf: CrfParams) -> np.ndarray:
    n, L = e.shape
    trans = crf.transitions.value
    alpha = np.empty((n, L))
    alpha[0] = crf.start.value + e[0]
    for t in range(1, n):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + trans, axis=0) + e[t]
    return alpha


def _backward(e: np.ndarray, crf: CrfParams) -> np.ndarray:
    n, L = e.shape
    trans = crf.transitions.value
    beta = np.empty((n, L))
    beta[n - 1] = crf.end.value
    for t in range(n - 2, -1, -1):
        beta[t] = logsumexp(trans + (e[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def crf_log_partition(emissions: np.ndarray, crf: CrfParams, mask: Optional[Sequence[bool]] = None) -> float:
    n = _prefix_length(emissions, crf, mask)
    alpha = _forward(emissions[:n], crf)
    return float(logsumexp(alpha[n - 1] + crf.end.value))


def sequence_score(emissions: np.ndarray, crf: CrfParams, labels: Sequence[int]) -> float:
    trans = crf.transitions.value
    score = crf.start.value[labels[0]] + emissions[0, labels[0]]
    for t in range(1, len(labels)):
        score = score + trans[labels[t - 1], labels[t]]
        score = score + emissions[t, labels[t]]
    return float(score + crf.end.value[labels[-1]])


def marginals(emissions: np.ndarray, crf: CrfParams, mask: Optional[Sequence[bool]] = None) -> np.ndarray:
    """Posterior p(y_t = k) for every unmasked step, shape (n, L)."""
    n = _prefix_length(emissions, crf, mask)
    e = emissions[:n]
    alpha = _forward(e, crf)
    beta = _backward(e, crf)
    log_z = logsumexp(alpha[n - 1] + crf.end.value)
    return np.exp(alpha + beta - log_z)


def crf_nll(
    emissions: np.ndarray,
    crf: CrfParams,
    gold: Sequence[int],
    mask: Optional[Sequence[bool]] = None,
    scale: float = 1.0,
) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of ``gold``; accumulates ``scale``-weighted grads into ``crf``.

    Returns the loss and d loss / d emissions (zeros under the mask, unscaled).
    """
    n = _prefix_length(emissions, crf, mask)
    L = crf.num_labels
    y = [int(v) for v in gold[:n]]
    if len(y) < n or any(not 0 <= v < L for v in y):
        raise ValueError(f"gold labels must be {n} ids in [0, {L}), got {list(gold)[:n]}")
    e = emissions[:n]
    trans = crf.transitions.value

    alpha = _forward(e, crf)
    beta = _backward(e, crf)
    log_z = float(logsumexp(alpha[n - 1] + crf.end.value))
    loss = log_z - sequence_score(e, crf, y)

    unary = np.exp(alpha + beta - log_z)
    d_e = np.zeros_like(emissions)
    d_e[:n] = unary
    d_e[np.arange(n), y] -= 1.0

    d_trans = np.zeros_like(trans)
    for t in range(n - 1):
        pair = alpha[t][:, None] + trans + (e[t + 1] + beta[t + 1])[None, :] - log_z
        d_trans += np.exp(pair)
        d_trans[y[t], y[t + 1]] -= 1.0
    d_start = unary[0].copy()
    d_start[y[0]] -= 1.0
    d_end = unary[n - 1].copy()
    d_end[y[-1]] -= 1.0

    crf.transitions.grad += scale * d_trans
    crf.start.grad += scale * d_start
    crf.end.grad += scale * d_end
    return loss, d_e


def viterbi(
    emissions: np.ndarray, crf: CrfParams, mask: Optional[Sequence[bool]] = None
) -> Tuple[List[int], float]:
    """Best label path over the unmasked prefix; ties go to the lower label id."""
    n = _prefix_length(emissions, crf, mask)
    e = emissions[:n]
    L = crf.num_labels
    trans = crf.transitions.value
    score = crf.start.value + e[0]
    backptr = np.zeros((n, L), dtype=np.int64)
    for t in range(1, n):
        cand = score[:, None] + trans
        # argmax returns the first maximum, i.e. the lowest previous label id
        backptr[t] = np.argmax(cand, axis=0)
        score = cand[backptr[t], np.arange(L)] + e[t]
    final = score + crf.end.value
    path = [int(np.argmax(final))]
    for t in range(n - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, sequence_score(e, crf, path)


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def softmax_decode(emissions: np.ndarray, mask: Optional[Sequence[bool]] = None) -> List[int]:
    if emissions.ndim != 2:
        raise ShapeError(f"emissions must be (T, L), got {emissions.shape}")
    n = emissions.shape[0] if mask is None else int(np.asarray(mask, dtype=bool).sum())
    return [int(k) for k in np.argmax(emissions[:n], axis=1)]


def softmax_nll(
    emissions: np.ndarray, gold: Sequence[int], mask: Optional[Sequence[bool]] = None
) -> Tuple[float, np.ndarray]:
    """Summed per-step cross-entropy for the CRF-free decoder; returns loss and d/d emissions."""
    n = emissions.shape[0] if mask is None else int(np.asarray(mask, dtype=bool).sum())
    if n < 1:
        raise ShapeError("softmax loss needs at least one unmasked step")
    L = emissions.shape[1]
    y = np.asarray(gold[:n], dtype=np.int64)
    if y.shape[0] < n or np.any((y < 0) | (y >= L)):
        raise ValueError(f"gold labels must be {n} ids in [0, {L})")
    e = emissions[:n]
    log_z = logsumexp(e, axis=1)
    loss = float(np.sum(log_z - e[np.arange(n), y]))
    d_e = np.zeros_like(emissions)
    d_e[:n] = np.exp(e - log_z[:, None])
    d_e[np.arange(n), y] -= 1.0
    return loss, d_e
