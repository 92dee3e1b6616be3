"""Single-trial training: minibatch objective, optimizer loop, early stopping."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from ..data import KnowledgeGraph, add_inverse_relations
from ..errors import TrialDivergence
from ..evaluation import evaluate
from ..models import EmbeddingState, GradAccumulator, ModelKind, match_all, match_all_grad, match_pairs, \
    match_pairs_grad, relation_width, scorer
from .init import INITIALIZERS, dropout_mask, init_embeddings
from .losses import LossSpec, loss_and_grad
from .negatives import AllEntityNegatives, NegSampling, sample_negatives_batch
from .optimizers import OPTIMIZERS, optimizer_step
from .regularizers import RegSpec, regularize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelKind
    neg: NegSampling
    loss: LossSpec
    reg: RegSpec
    dropout_rate: float = 0.0
    optimizer: str = "Adam"
    learning_rate: float = 1e-3
    initializer: str = "xavier_uniform"
    batch_size: int = 128
    dimension: int = 100
    inverse_relation: bool = False
    epochs: int = 400
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind.parse(self.model))
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.initializer not in INITIALIZERS:
            raise ValueError(f"unknown initializer {self.initializer!r}")
        relation_width(self.model, self.dimension)

    @classmethod
    def from_hp(cls, model, hp: Mapping, **overrides) -> "TrainConfig":
        """Build from a flat hyperparameter mapping (search-space keys)."""
        loss_kind = hp["loss_function"]
        loss = LossSpec(
            loss_kind,
            gamma=float(hp["gamma"]) if loss_kind == "MR" else None,
            alpha=float(hp["adv_weight"]) if loss_kind == "BCE_adv" else None,
        )
        reg_kind = hp["regularizer"]
        reg = RegSpec(reg_kind, float(hp["reg_weight"]) if reg_kind != "None" else None)
        fields = dict(
            model=model,
            neg=NegSampling.parse(hp["negative_samples"]),
            loss=loss,
            reg=reg,
            dropout_rate=float(hp["dropout_rate"]),
            optimizer=hp["optimizer"],
            learning_rate=float(hp["learning_rate"]),
            initializer=hp["initializer"],
            batch_size=int(hp["batch_size"]),
            dimension=int(hp["dimension_size"]),
            inverse_relation=bool(hp["inverse_relation"]),
        )
        fields.update(overrides)
        return cls(**fields)


@dataclass(frozen=True)
class TrialBudget:
    eval_every: int = 10
    patience: int = 5
    max_seconds: float | None = None
    eval_batch_size: int = 256


@dataclass
class TrialResult:
    metric: float
    seconds: float
    train_seconds: float
    steps: int
    epochs_run: int
    best_epoch: int
    diverged: bool = False
    truncated: bool = False
    loss_history: list = field(default_factory=list)
    eval_history: list = field(default_factory=list)
    state: EmbeddingState | None = None

    @property
    def seconds_per_kilo_step(self) -> float:
        return 1000.0 * self.train_seconds / self.steps if self.steps else float("nan")


def _gather_rows(state: EmbeddingState, h, r, t, rate, rng):
    """Look up embeddings and apply dropout; returns rows and their masks."""
    rows = [state.entity[h], state.relation[r], state.entity[t]]
    masks = [dropout_mask(x.shape, rate, rng) if rng is not None else None for x in rows]
    dropped = [x if m is None else x * m for x, m in zip(rows, masks)]
    return dropped, masks


def _masked(g, m):
    return g if m is None else g * m


def _uniform_objective(config, state, batch, negs, acc, rng):
    """Each negative shares its positive's query: tail corruptions score
    against ``q(h, r)``, head corruptions against the head query ``q(r, t)``."""
    sc = scorer(config.model)
    B, m = negs.slot.shape
    h, r, t = batch.T
    (h_e, r_e, t_e), (mh, mr, mt) = _gather_rows(state, h, r, t, config.dropout_rate, rng)
    q_t = sc.tail_query(h_e, r_e)
    q_h = sc.head_query(r_e, t_e)
    pos = match_pairs(sc.match, q_t, t_e)
    cand_ids = np.where(negs.slot == 2, negs.triples[..., 2], negs.triples[..., 0])
    if sc.match == "dot" and state.num_entities <= 2 * m:
        loss, dq_t, dq_h, dt = _dense_dot_negatives(config, state, q_t, q_h, t_e, pos, cand_ids,
                                                     negs.slot == 2, acc)
    else:
        loss, dq_t, dq_h, dt = _gathered_negatives(config, sc, state, q_t, q_h, t_e, pos, cand_ids,
                                                    negs.slot == 2, acc)
    dh, dr = sc.tail_query_grad(h_e, r_e, dq_t)
    dr2, dt2 = sc.head_query_grad(r_e, t_e, dq_h)
    acc.add_entity(h, _masked(dh, mh))
    acc.add_relation(r, _masked(dr + dr2, mr))
    acc.add_entity(t, _masked(dt + dt2, mt))
    return loss


def _dense_dot_negatives(config, state, q_t, q_h, t_e, pos, cand_ids, tail_corrupt, acc):
    """Score negatives through full query-by-entity products (cheap when m is close to |E|)."""
    B, m = cand_ids.shape
    n_ent = state.num_entities
    table = state.entity
    s_t = q_t @ table.T
    s_h = q_h @ table.T
    rows = np.repeat(np.arange(B), m).reshape(B, m)
    neg = np.where(tail_corrupt, s_t[rows, cand_ids], s_h[rows, cand_ids])
    loss, d_pos, d_neg = loss_and_grad(config.loss, pos[:, None], neg)
    flat = (rows * n_ent + cand_ids).ravel()
    w_t = np.bincount(flat, weights=np.where(tail_corrupt, d_neg, 0.0).ravel(), minlength=B * n_ent)
    w_h = np.bincount(flat, weights=np.where(tail_corrupt, 0.0, d_neg).ravel(), minlength=B * n_ent)
    w_t = w_t.reshape(B, n_ent)
    w_h = w_h.reshape(B, n_ent)
    dq_t = d_pos[:, :1] * t_e + w_t @ table
    dt = d_pos[:, :1] * q_t
    dq_h = w_h @ table
    acc.add_entity_dense(w_t.T @ q_t + w_h.T @ q_h)
    return loss, dq_t, dq_h, dt


def _gathered_negatives(config, sc, state, q_t, q_h, t_e, pos, cand_ids, tail_corrupt, acc):
    B, m = cand_ids.shape
    tail_corrupt = tail_corrupt[..., None]
    neg = np.empty((B, m))
    d = state.dim
    step = max(1, (1 << 22) // max(1, m * d))
    chunks = []
    for lo in range(0, B, step):
        sl = slice(lo, lo + step)
        # dropout acts on the batch's own lookups; candidates stay intact as in all-entity mode
        cand = state.entity[cand_ids[sl]]
        q = np.where(tail_corrupt[sl], q_t[sl, None, :], q_h[sl, None, :])
        neg[sl] = match_pairs(sc.match, q.reshape(-1, d), cand.reshape(-1, d)).reshape(-1, m)
        chunks.append((sl, cand, q))
    loss, d_pos, d_neg = loss_and_grad(config.loss, pos[:, None], neg)
    dq_t, dt = match_pairs_grad(sc.match, q_t, t_e, d_pos[:, 0])
    dq_h = np.zeros_like(q_h)
    for sl, cand, q in chunks:
        dq, dc = match_pairs_grad(sc.match, q.reshape(-1, d), cand.reshape(-1, d), d_neg[sl].ravel())
        dq = dq.reshape(q.shape)
        dq_t[sl] += np.where(tail_corrupt[sl], dq, 0.0).sum(axis=1)
        dq_h[sl] += np.where(tail_corrupt[sl], 0.0, dq).sum(axis=1)
        acc.add_entity(cand_ids[sl].ravel(), dc)
    return loss, dq_t, dq_h, dt


def _padded_positives(scores, pos_mask):
    rows, cols = np.nonzero(pos_mask)
    counts = np.bincount(rows, minlength=len(scores))
    width = max(1, int(counts.max()) if len(counts) else 1)
    slot = np.arange(len(rows)) - np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.zeros((len(scores), width))
    mask = np.zeros((len(scores), width), dtype=bool)
    pos[rows, slot] = scores[rows, cols]
    mask[rows, slot] = True
    return pos, mask, (rows, cols, slot)


def _all_entity_objective(config, state, negs: AllEntityNegatives, acc, rng, total_rows):
    sc = scorer(config.model)
    n_ent = state.num_entities
    step = max(1, (1 << 22) // max(1, n_ent * (1 if sc.match == "dot" else state.dim)))
    step = max(step, 1)
    loss = 0.0
    dense = np.zeros_like(state.entity)
    for lo in range(0, len(negs.queries), step):
        q_trip = negs.queries[lo:lo + step]
        slots = negs.slot[lo:lo + step]
        pmask = negs.positive_mask[lo:lo + step]
        h, r, t = q_trip.T
        (h_e, r_e, t_e), (mh, mr, mt) = _gather_rows(state, h, r, t, config.dropout_rate, rng)
        tail_rows = slots == 2
        q = np.where(tail_rows[:, None], sc.tail_query(h_e, r_e), sc.head_query(r_e, t_e))
        S = match_all(sc.match, q, state.entity)
        pos, pos_mask, (prow, pcol, pslot) = _padded_positives(S, pmask)
        part, d_pos, d_neg = loss_and_grad(config.loss, pos, S, pos_mask, ~pmask)
        weight = len(q_trip) / total_rows
        loss += weight * part
        dS = d_neg * weight
        np.add.at(dS, (prow, pcol), d_pos[prow, pslot] * weight)
        dq, dtable = match_all_grad(sc.match, q, state.entity, dS)
        dense += dtable
        dh_t, dr_t = sc.tail_query_grad(h_e, r_e, dq)
        dr_h, dt_h = sc.head_query_grad(r_e, t_e, dq)
        tr = tail_rows[:, None]
        acc.add_entity(h, _masked(np.where(tr, dh_t, 0.0), mh))
        acc.add_relation(r, _masked(np.where(tr, dr_t, dr_h), mr))
        acc.add_entity(t, _masked(np.where(tr, 0.0, dt_h), mt))
    acc.add_entity_dense(dense)
    return loss


def batch_objective(config: TrainConfig, state: EmbeddingState, batch, negs, rng=None):
    """Loss and row-sparse gradient of one minibatch given its negatives.

    ``rng`` drives dropout; pass None to disable dropout (inference-style
    forward pass, as used by gradient checks).
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    acc = GradAccumulator(state.entity.shape[1], state.relation.shape[1])
    drop_rng = rng if config.dropout_rate > 0 else None
    if isinstance(negs, AllEntityNegatives):
        loss = _all_entity_objective(config, state, negs, acc, drop_rng, len(negs.queries))
    else:
        loss = _uniform_objective(config, state, batch, negs, acc, drop_rng)
    if config.reg.kind != "None":
        loss += regularize(config.reg, config.model, state, batch, scale=1.0 / len(batch), acc=acc)
    return loss, acc.result()


def effective_neg(neg: NegSampling, num_entities: int) -> NegSampling:
    if neg.kind == "uniform" and neg.m > num_entities:
        return NegSampling("uniform", num_entities)
    return neg


def train_trial(kg: KnowledgeGraph, config: TrainConfig, budget: TrialBudget | None = None,
                keep_state: bool = False) -> TrialResult:
    """Train one configuration and report its best validation MRR.

    Divergence (non-finite loss, gradient or parameters) yields metric 0.0
    with ``diverged`` set. A wall-clock limit in ``budget`` stops training
    mid-epoch and sets ``truncated``; the metric is then the best completed
    evaluation.
    """
    budget = budget or TrialBudget()
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    train_kg = add_inverse_relations(kg) if config.inverse_relation else kg
    neg = effective_neg(config.neg, train_kg.num_entities)
    if neg != config.neg:
        logger.info("clamped %d negatives to %d entities", config.neg.m, neg.m)
        config = replace(config, neg=neg)
    state = init_embeddings(config.model, train_kg.num_entities, train_kg.num_relations,
                            config.dimension, config.initializer, rng)
    train = train_kg.train
    index = train_kg.train_index
    n = len(train)
    best, best_epoch, stale = 0.0, 0, 0
    best_state = None
    steps = 0
    train_seconds = 0.0
    losses, evals = [], []
    diverged = truncated = False
    epoch = 0
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            perm = rng.permutation(n)
            # row-weighted so the epoch loss does not depend on the batch split
            total, rows = 0.0, 0
            for lo in range(0, n, config.batch_size):
                if budget.max_seconds is not None and time.perf_counter() - start > budget.max_seconds:
                    truncated = True
                    break
                batch = train[perm[lo:lo + config.batch_size]]
                negs = sample_negatives_batch(batch, neg, train_kg.num_entities, index, rng)
                loss, grads = batch_objective(config, state, batch, negs, rng)
                if not np.isfinite(loss):
                    raise TrialDivergence(steps, "loss")
                optimizer_step(state, grads, config.optimizer, config.learning_rate, steps)
                steps += 1
                total += loss * len(batch)
                rows += len(batch)
            train_seconds += time.perf_counter() - t0
            if truncated:
                break
            losses.append(total / max(rows, 1))
            if epoch % budget.eval_every == 0 or epoch == config.epochs:
                if not state.is_finite():
                    raise TrialDivergence(steps, "parameter")
                mrr = evaluate(config.model, state, train_kg, "valid", budget.eval_batch_size).mrr
                evals.append((epoch, mrr))
                if mrr > best:
                    best, best_epoch, stale = mrr, epoch, 0
                    if keep_state:
                        best_state = state.copy()
                else:
                    stale += 1
                    if stale >= budget.patience:
                        break
    except TrialDivergence as exc:
        logger.info("trial diverged: %s", exc)
        diverged = True
    return TrialResult(
        metric=0.0 if diverged else best,
        seconds=time.perf_counter() - start,
        train_seconds=train_seconds,
        steps=steps,
        epochs_run=epoch,
        best_epoch=best_epoch,
        diverged=diverged,
        truncated=truncated,
        loss_history=losses,
        eval_history=evals,
        state=(best_state or state) if keep_state else None,
    )
