"""Lazy (row-sparse) SGD, Adagrad and Adam.

Only rows present in a gradient are read or written. Adam keeps one step
counter per row so that bias correction stays exact for rows that are
touched irregularly.
"""
from __future__ import annotations

import numpy as np

from ..errors import TrialDivergence
from ..models import EmbeddingState, SparseGrad

OPTIMIZERS = ("Adam", "Adagrad", "SGD")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
ADAGRAD_EPS = 1e-10


def _slot(state: EmbeddingState, name, like):
    if name not in state.slots:
        state.slots[name] = np.zeros_like(like)
    return state.slots[name]


def _apply(state, which, rows, grad, optimizer, lr):
    param = state.entity if which == "entity" else state.relation
    if optimizer == "SGD":
        param[rows] -= lr * grad
    elif optimizer == "Adagrad":
        acc = _slot(state, f"{which}.sum_sq", param)
        acc[rows] += grad * grad
        param[rows] -= lr * grad / (np.sqrt(acc[rows]) + ADAGRAD_EPS)
    elif optimizer == "Adam":
        m = _slot(state, f"{which}.m", param)
        v = _slot(state, f"{which}.v", param)
        steps = _slot(state, f"{which}.step", param[:, 0])
        steps[rows] += 1
        t = steps[rows][:, None]
        m[rows] = ADAM_BETA1 * m[rows] + (1 - ADAM_BETA1) * grad
        v[rows] = ADAM_BETA2 * v[rows] + (1 - ADAM_BETA2) * grad * grad
        m_hat = m[rows] / (1 - ADAM_BETA1 ** t)
        v_hat = v[rows] / (1 - ADAM_BETA2 ** t)
        param[rows] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")


def optimizer_step(state: EmbeddingState, grads: SparseGrad, optimizer: str, lr: float,
                   batch_index: int = 0) -> EmbeddingState:
    """Update ``state`` in place from a row-sparse gradient and return it."""
    if not grads.is_finite():
        raise TrialDivergence(batch_index)
    if len(grads.entity_rows):
        _apply(state, "entity", grads.entity_rows, grads.entity_values, optimizer, lr)
    if len(grads.relation_rows):
        _apply(state, "relation", grads.relation_rows, grads.relation_values, optimizer, lr)
    return state
