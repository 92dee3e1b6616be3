"""Loss functions over positive and negative scores, with their gradients.

All losses take per-row positive scores ``pos[B, P]`` and negative scores
``neg[B, K]`` with boolean masks selecting the valid entries, and return the
mean over rows of the per-row loss together with d(loss)/d(score) for both
inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

LOSS_KINDS = ("MR", "BCE_mean", "BCE_sum", "BCE_adv", "CE")


@dataclass(frozen=True)
class LossSpec:
    kind: str
    gamma: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}")
        if (self.gamma is not None) != (self.kind == "MR"):
            raise ValueError("gamma is required for MR and only for MR")
        if (self.alpha is not None) != (self.kind == "BCE_adv"):
            raise ValueError("alpha is required for BCE_adv and only for BCE_adv")


def _prep(scores, mask):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    if mask is None:
        mask = np.ones(scores.shape, dtype=bool)
    return scores, np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)


def _masked_softmax(x, mask):
    z = np.where(mask, x, -np.inf)
    top = np.max(z, axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(z - top), 0.0)
    s = e.sum(axis=1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def adversarial_weights(neg, mask, alpha):
    """Self-adversarial weights softmax(alpha * f) over each row's valid negatives."""
    return _masked_softmax(alpha * neg, mask)


def _margin(pos, pos_mask, neg, neg_mask, gamma):
    B, P = pos.shape
    K = neg.shape[1]
    total = 0.0
    d_pos = np.zeros_like(pos)
    d_neg = np.zeros_like(neg)
    # bound the (rows, P, K) pairwise block to ~4M entries
    step = max(1, (1 << 22) // max(1, P * K))
    for lo in range(0, B, step):
        sl = slice(lo, lo + step)
        arg = gamma - pos[sl, :, None] + neg[sl, None, :]
        valid = pos_mask[sl, :, None] & neg_mask[sl, None, :]
        active = valid & (arg > 0)
        total += np.where(active, arg, 0.0).sum()
        d_pos[sl] = -active.sum(axis=2)
        d_neg[sl] = active.sum(axis=1)
    return total, d_pos, d_neg


def loss_and_grad(loss: LossSpec, pos_scores, neg_scores, pos_mask=None, neg_mask=None):
    """Return ``(mean loss, dL/dpos, dL/dneg)``.

    Adversarial weights in BCE_adv are treated as constants for the gradient.
    """
    pos, pos_mask = _prep(pos_scores, pos_mask)
    neg, neg_mask = _prep(neg_scores, neg_mask)
    if pos.shape[0] != neg.shape[0]:
        raise ValueError("pos and neg must have the same number of rows")
    B = pos.shape[0]
    pm = pos_mask.astype(np.float64)
    nm = neg_mask.astype(np.float64)

    if loss.kind == "MR":
        total, d_pos, d_neg = _margin(pos, pos_mask, neg, neg_mask, loss.gamma)
    elif loss.kind == "CE":
        lse_neg = logsumexp(np.where(neg_mask, neg, -np.inf), axis=1, keepdims=True)
        lse_neg = np.where(neg_mask.any(axis=1, keepdims=True), lse_neg, -np.inf)
        per_pos = -pos + np.logaddexp(pos, lse_neg)
        total = np.where(pos_mask, per_pos, 0.0).sum()
        # d/df_p = -1 + sigma(f_p - lse); d/df_n = softmax_n * sum_p sigma(lse - f_p)
        d_pos = pm * (expit(pos - lse_neg) - 1.0)
        coef = (pm * expit(lse_neg - pos)).sum(axis=1, keepdims=True)
        d_neg = _masked_softmax(neg, neg_mask) * coef
    else:
        # -log sigma(f) = softplus(-f); -log(1 - sigma(f)) = softplus(f)
        pos_term = np.where(pos_mask, np.logaddexp(0.0, -pos), 0.0).sum()
        d_pos = -pm * expit(-pos)
        if loss.kind == "BCE_sum":
            w = nm
        elif loss.kind == "BCE_mean":
            count = nm.sum(axis=1, keepdims=True)
            w = np.divide(nm, count, out=np.zeros_like(nm), where=count > 0)
        else:
            w = adversarial_weights(neg, neg_mask, loss.alpha)
        neg_term = (w * np.where(neg_mask, np.logaddexp(0.0, neg), 0.0)).sum()
        total = pos_term + neg_term
        d_neg = w * expit(neg)
    return float(total) / B, d_pos / B, d_neg / B
