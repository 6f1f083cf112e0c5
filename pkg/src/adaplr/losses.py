"""Positive, negative and negative-ensemble losses with gradients w.r.t. logits.

Every loss takes raw logits, either one vector of length ``C`` or a batch of
shape ``(B, C)``. Batch values are the arithmetic mean over rows and the
returned gradient is that of the mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, LabelError
from .numerics import EPS_PROB, check_finite, log_softmax


@dataclass
class LossResult:
    value: float
    grad_logits: np.ndarray


def _prepare(logits, labels):
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    check_finite(z, "logits")
    lab = np.asarray(labels)
    if single:
        lab = lab[None, ...]
    if lab.shape[0] != z.shape[0]:
        raise ArgumentError(f"{lab.shape[0]} label rows for {z.shape[0]} logit rows")
    if lab.size and (not np.issubdtype(lab.dtype, np.integer) or lab.min() < 0 or lab.max() >= z.shape[1]):
        raise LabelError(f"labels must be integers in [0, {z.shape[1]})")
    return z, lab.astype(np.intp), single


def _finish(per_row: np.ndarray, grad: np.ndarray, single: bool) -> LossResult:
    n = per_row.shape[0]
    if single:
        return LossResult(float(per_row[0]), grad[0])
    return LossResult(float(per_row.mean()), grad / n)


def pl_loss(logits, labels) -> LossResult:
    """Cross entropy ``-log p[label]``; gradient ``p - onehot(label)``."""
    z, y, single = _prepare(logits, labels)
    rows = np.arange(z.shape[0])
    logp = log_softmax(z)
    value = -np.maximum(logp[rows, y], np.log(EPS_PROB))
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return _finish(value, grad, single)


def nel_loss(logits, residual_labels) -> LossResult:
    """Mean over the residual set of ``-log(1 - p_c)``.

    ``residual_labels`` is a 1-D index set for a single logit vector, or a
    ``(B, N_RL)`` array for a batch. Each term contributes
    ``w_c * (onehot_c - p)`` to the gradient with ``w_c = p_c / (1 - p_c)``.
    """
    z, rl, single = _prepare(logits, residual_labels)
    if rl.ndim != 2 or rl.shape[1] == 0:
        raise ArgumentError("residual label set must be non-empty")
    n_rl = rl.shape[1]
    rows = np.arange(z.shape[0])[:, None]
    p = np.exp(log_softmax(z))
    pc = p[rows, rl]
    one_minus = np.maximum(1.0 - pc, EPS_PROB)
    value = -np.log(one_minus).mean(axis=1)
    w = pc / one_minus
    grad = -w.sum(axis=1, keepdims=True) * p
    np.add.at(grad, (np.broadcast_to(rows, rl.shape), rl), w)
    grad /= n_rl
    return _finish(value, grad, single)


def nl_loss(logits, complementary_labels) -> LossResult:
    """Negative-learning loss ``-log(1 - p[ybar])`` for one complementary label."""
    z, c, single = _prepare(logits, complementary_labels)
    rows = np.arange(z.shape[0])
    p = np.exp(log_softmax(z))
    pc = p[rows, c]
    # 1 - p_c as the sum of the other entries keeps the tail accurate
    rest = np.maximum(p.sum(axis=1) - pc, EPS_PROB)
    value = -np.log(rest)
    # d/dz_j = p_c (delta_jc - p_j) / (1 - p_c)
    grad = -(pc / rest)[:, None] * p
    grad[rows, c] = pc
    return _finish(value, grad, single)
