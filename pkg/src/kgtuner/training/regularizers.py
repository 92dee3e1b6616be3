"""Explicit regularizers over the embeddings used by a batch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import UnsupportedCombinationError
from ..models import EmbeddingState, GradAccumulator, SparseGrad, scorer

REG_KINDS = ("FRO", "NUC", "DURA", "None")


@dataclass(frozen=True)
class RegSpec:
    kind: str
    weight: float | None = None

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if (self.weight is not None) != (self.kind != "None"):
            raise ValueError("a weight is required unless the regularizer is None")


def norm_penalty(kind: str, values: np.ndarray):
    """``sum p^2`` (FRO) or ``sum |p|^3`` (NUC) and its gradient."""
    if kind == "FRO":
        return float(np.sum(values * values)), 2.0 * values
    if kind == "NUC":
        a = np.abs(values)
        return float(np.sum(a ** 3)), 3.0 * a * values
    raise ValueError(kind)


def regularize(reg: RegSpec, kind, state: EmbeddingState, triples, scale: float = 1.0,
               acc: GradAccumulator | None = None):
    """Weighted penalty over the rows of ``triples`` (one term per occurrence).

    FRO and NUC act on the head, relation and tail rows of every triple; DURA
    penalises ``||c(h, r) - t||^2`` where ``c`` is the model's composition of
    head and relation. Returns ``(value, SparseGrad)``, or only the value when
    gradients are accumulated into ``acc``.
    """
    if reg.kind == "None":
        raise ValueError("regularize called with regularizer None")
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    h, r, t = triples.T
    own = acc is None
    if own:
        acc = GradAccumulator(state.entity.shape[1], state.relation.shape[1])
    w = reg.weight * scale
    if reg.kind in ("FRO", "NUC"):
        total = 0.0
        for rows, table, add in ((h, state.entity, acc.add_entity), (r, state.relation, acc.add_relation),
                                 (t, state.entity, acc.add_entity)):
            val, grad = norm_penalty(reg.kind, table[rows])
            total += val
            add(rows, w * grad)
    else:
        try:
            sc = scorer(kind)
        except Exception as exc:  # pragma: no cover - all supported models compose
            raise UnsupportedCombinationError(f"DURA undefined for {kind}") from exc
        h_e, r_e, t_e = state.entity[h], state.relation[r], state.entity[t]
        resid = sc.tail_query(h_e, r_e) - t_e
        total = float(np.sum(resid * resid))
        g = 2.0 * w * resid
        dh, dr = sc.tail_query_grad(h_e, r_e, g)
        acc.add_entity(h, dh)
        acc.add_relation(r, dr)
        acc.add_entity(t, -g)
    value = w * total
    if own:
        return value, acc.result()
    return value
