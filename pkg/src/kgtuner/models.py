"""Scoring functions and analytic gradients for the supported embedding models.

Every model is written as a *query* followed by a *match*. For tail
prediction the query is built from (head, relation) and matched against tail
embeddings; head prediction builds the query from (relation, tail) and
matches it against head embeddings. Three matches cover all models:

``dot``  score = <q, c>
``l1``   score = -sum |q - c|
``cl1``  score = -sum_k |q_k - c_k|  over complex coordinates

Complex vectors are stored as ``[real | imag]`` halves of a real array.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import UnsupportedModelError


class ModelKind(str, enum.Enum):
    TRANSE = "TransE"
    DISTMULT = "DistMult"
    COMPLEX = "ComplEx"
    RESCAL = "RESCAL"
    ROTATE = "RotatE"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        for kind in cls:
            if str(value).lower() == kind.value.lower():
                return kind
        if str(value).lower() in ("conve", "tucker"):
            raise UnsupportedModelError(f"{value} is recognized but not supported by this trainer")
        raise UnsupportedModelError(f"unknown model {value!r}")


SUPPORTED_MODELS = tuple(k.value for k in ModelKind)
KNOWN_MODELS = SUPPORTED_MODELS + ("ConvE", "TuckER")

_KIND_CODES = {k: i for i, k in enumerate(ModelKind)}


def relation_width(kind: ModelKind, dim: int) -> int:
    kind = ModelKind.parse(kind)
    if kind in (ModelKind.COMPLEX, ModelKind.ROTATE) and dim % 2:
        raise ValueError(f"{kind.value} needs an even dimension, got {dim}")
    if kind is ModelKind.RESCAL:
        return dim * dim
    if kind is ModelKind.ROTATE:
        return dim // 2
    return dim


@dataclass
class EmbeddingState:
    """Entity/relation parameters plus per-row optimizer accumulators."""

    kind: ModelKind
    dim: int
    entity: np.ndarray
    relation: np.ndarray
    slots: dict = field(default_factory=dict)

    @property
    def num_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation.shape[0]

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(
            self.kind,
            self.dim,
            self.entity.copy(),
            self.relation.copy(),
            {k: v.copy() for k, v in self.slots.items()},
        )

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.entity).all() and np.isfinite(self.relation).all())


_MAGIC = b"KGTE"
_HEADER = struct.Struct("<4sIIIQQQ")


def save_state(state: EmbeddingState, path) -> None:
    """Write parameters as a flat little-endian float64 checkpoint."""
    header = _HEADER.pack(
        _MAGIC, 1, _KIND_CODES[state.kind], state.dim,
        state.num_entities, state.num_relations, state.relation.shape[1],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(state.entity, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.relation, dtype="<f8").tobytes())


def load_state(path) -> EmbeddingState:
    raw = Path(path).read_bytes()
    magic, version, code, dim, n_ent, n_rel, rel_w = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path} is not a checkpoint written by save_state")
    kind = list(ModelKind)[code]
    off = _HEADER.size
    ent = np.frombuffer(raw, dtype="<f8", count=n_ent * dim, offset=off).reshape(n_ent, dim)
    off += n_ent * dim * 8
    rel = np.frombuffer(raw, dtype="<f8", count=n_rel * rel_w, offset=off).reshape(n_rel, rel_w)
    return EmbeddingState(kind, dim, ent.astype(np.float64), rel.astype(np.float64))


# ---------------------------------------------------------------------------
# complex helpers on [re | im] arrays


def _split(x):
    half = x.shape[-1] // 2
    return x[..., :half], x[..., half:]


def _join(re, im):
    return np.concatenate([re, im], axis=-1)


def _cmul(a_re, a_im, b_re, b_im):
    return a_re * b_re - a_im * b_im, a_re * b_im + a_im * b_re


class Scorer:
    """Model-specific query construction and its vector-Jacobian products."""

    match = "dot"

    def tail_query(self, h, r):
        raise NotImplementedError

    def tail_query_grad(self, h, r, g):
        raise NotImplementedError

    def head_query(self, r, t):
        raise NotImplementedError

    def head_query_grad(self, r, t, g):
        raise NotImplementedError


class TransE(Scorer):
    match = "l1"

    def tail_query(self, h, r):
        return h + r

    def tail_query_grad(self, h, r, g):
        return g, g

    def head_query(self, r, t):
        return t - r

    def head_query_grad(self, r, t, g):
        return -g, g


class DistMult(Scorer):
    def tail_query(self, h, r):
        return h * r

    def tail_query_grad(self, h, r, g):
        return g * r, g * h

    def head_query(self, r, t):
        return r * t

    def head_query_grad(self, r, t, g):
        return g * t, g * r


class ComplEx(Scorer):
    def tail_query(self, h, r):
        return _join(*_cmul(*_split(h), *_split(r)))

    def tail_query_grad(self, h, r, g):
        g_re, g_im = _split(g)
        h_re, h_im = _split(h)
        r_re, r_im = _split(r)
        # d/dh = g * conj(r), d/dr = g * conj(h)
        dh = _join(*_cmul(g_re, g_im, r_re, -r_im))
        dr = _join(*_cmul(g_re, g_im, h_re, -h_im))
        return dh, dr

    def head_query(self, r, t):
        r_re, r_im = _split(r)
        return _join(*_cmul(r_re, -r_im, *_split(t)))

    def head_query_grad(self, r, t, g):
        g_re, g_im = _split(g)
        r_re, r_im = _split(r)
        t_re, t_im = _split(t)
        dt = _join(*_cmul(g_re, g_im, r_re, r_im))
        ds_re, ds_im = _cmul(g_re, g_im, t_re, -t_im)
        return _join(ds_re, -ds_im), dt


class RESCAL(Scorer):
    def _mat(self, r):
        d = int(round(np.sqrt(r.shape[-1])))
        return r.reshape(r.shape[:-1] + (d, d))

    def tail_query(self, h, r):
        return np.einsum("...i,...ij->...j", h, self._mat(r))

    def tail_query_grad(self, h, r, g):
        M = self._mat(r)
        dh = np.einsum("...ij,...j->...i", M, g)
        dM = h[..., :, None] * g[..., None, :]
        return dh, dM.reshape(dM.shape[:-2] + (-1,))

    def head_query(self, r, t):
        return np.einsum("...ij,...j->...i", self._mat(r), t)

    def head_query_grad(self, r, t, g):
        M = self._mat(r)
        dt = np.einsum("...i,...ij->...j", g, M)
        dM = g[..., :, None] * t[..., None, :]
        return dM.reshape(dM.shape[:-2] + (-1,)), dt


class RotatE(Scorer):
    match = "cl1"

    def tail_query(self, h, r):
        h_re, h_im = _split(h)
        return _join(*_cmul(h_re, h_im, np.cos(r), np.sin(r)))

    def tail_query_grad(self, h, r, g):
        g_re, g_im = _split(g)
        c, s = np.cos(r), np.sin(r)
        q_re, q_im = _split(self.tail_query(h, r))
        dh = _join(*_cmul(g_re, g_im, c, -s))
        return dh, -g_re * q_im + g_im * q_re

    def head_query(self, r, t):
        t_re, t_im = _split(t)
        return _join(*_cmul(t_re, t_im, np.cos(r), -np.sin(r)))

    def head_query_grad(self, r, t, g):
        g_re, g_im = _split(g)
        c, s = np.cos(r), np.sin(r)
        q_re, q_im = _split(self.head_query(r, t))
        dt = _join(*_cmul(g_re, g_im, c, s))
        return g_re * q_im - g_im * q_re, dt


_SCORERS = {
    ModelKind.TRANSE: TransE(),
    ModelKind.DISTMULT: DistMult(),
    ModelKind.COMPLEX: ComplEx(),
    ModelKind.RESCAL: RESCAL(),
    ModelKind.ROTATE: RotatE(),
}


def scorer(kind) -> Scorer:
    return _SCORERS[ModelKind.parse(kind)]


# ---------------------------------------------------------------------------
# matches


def match_pairs(match: str, q, c):
    """Score aligned rows: ``q[..., d]`` against ``c[..., d]``."""
    if match == "dot":
        return np.sum(q * c, axis=-1)
    if match == "l1":
        return -np.sum(np.abs(q - c), axis=-1)
    d_re, d_im = _split(q - c)
    return -np.sum(np.sqrt(d_re * d_re + d_im * d_im), axis=-1)


def match_pairs_grad(match: str, q, c, g):
    """Vector-Jacobian product of :func:`match_pairs`; returns ``(dq, dc)``."""
    g = np.asarray(g)[..., None]
    if match == "dot":
        return g * c, g * q
    if match == "l1":
        s = np.sign(q - c)
        return -g * s, g * s
    d_re, d_im = _split(q - c)
    mod = np.sqrt(d_re * d_re + d_im * d_im)
    inv = np.divide(1.0, mod, out=np.zeros_like(mod), where=mod > 0)
    u = _join(d_re * inv, d_im * inv)
    return -g * u, g * u


def _chunk_rows(n_rows, n_cand, dim, budget=1 << 22):
    return max(1, budget // max(1, n_cand * dim))


def match_all(match: str, q, table):
    """Score every query row ``q[B, d]`` against every candidate ``table[N, d]``."""
    if match == "dot":
        return q @ table.T
    out = np.empty((q.shape[0], table.shape[0]))
    step = _chunk_rows(q.shape[0], table.shape[0], table.shape[1])
    for lo in range(0, q.shape[0], step):
        out[lo:lo + step] = match_pairs(match, q[lo:lo + step, None, :], table[None, :, :])
    return out


def match_all_grad(match: str, q, table, g):
    """VJP of :func:`match_all` with upstream ``g[B, N]``; returns ``(dq, dtable)``."""
    if match == "dot":
        return g @ table, g.T @ q
    dq = np.empty_like(q)
    dtable = np.zeros_like(table)
    step = _chunk_rows(q.shape[0], table.shape[0], table.shape[1])
    for lo in range(0, q.shape[0], step):
        a, b = match_pairs_grad(match, q[lo:lo + step, None, :], table[None, :, :], g[lo:lo + step])
        dq[lo:lo + step] = a.sum(axis=1)
        dtable += b.sum(axis=0)
    return dq, dtable


# ---------------------------------------------------------------------------
# public scoring API


def _check_ids(state: EmbeddingState, h, r, t):
    for name, ids, bound in (("head", h, state.num_entities), ("relation", r, state.num_relations),
                             ("tail", t, state.num_entities)):
        if ids is None:
            continue
        arr = np.asarray(ids)
        if arr.size and (arr.min() < 0 or arr.max() >= bound):
            raise IndexError(f"{name} id out of range [0, {bound})")


def score(kind, state: EmbeddingState, h, r, t):
    """Plausibility of ``(h, r, t)``; accepts scalars or equal-shape id arrays."""
    sc = scorer(kind)
    _check_ids(state, h, r, t)
    q = sc.tail_query(state.entity[h], state.relation[r])
    out = match_pairs(sc.match, q, state.entity[t])
    return float(out) if np.ndim(out) == 0 else out


def score_batch_all_tails(kind, state: EmbeddingState, h, r) -> np.ndarray:
    """Scores of ``(h, r, e)`` for every entity ``e``; shape ``(|E|,)`` or ``(B, |E|)``."""
    sc = scorer(kind)
    _check_ids(state, h, r, None)
    scalar = np.ndim(h) == 0
    h, r = np.atleast_1d(h), np.atleast_1d(r)
    q = sc.tail_query(state.entity[h], state.relation[r])
    out = match_all(sc.match, q, state.entity)
    return out[0] if scalar else out


def score_batch_all_heads(kind, state: EmbeddingState, r, t) -> np.ndarray:
    """Scores of ``(e, r, t)`` for every entity ``e``."""
    sc = scorer(kind)
    _check_ids(state, None, r, t)
    scalar = np.ndim(t) == 0
    r, t = np.atleast_1d(r), np.atleast_1d(t)
    q = sc.head_query(state.relation[r], state.entity[t])
    out = match_all(sc.match, q, state.entity)
    return out[0] if scalar else out


@dataclass
class SparseGrad:
    """Row-sparse gradient: unique row ids and their gradient rows."""

    entity_rows: np.ndarray
    entity_values: np.ndarray
    relation_rows: np.ndarray
    relation_values: np.ndarray

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.entity_values).all() and np.isfinite(self.relation_values).all())

    def to_dense(self, state: EmbeddingState):
        de = np.zeros_like(state.entity)
        dr = np.zeros_like(state.relation)
        de[self.entity_rows] = self.entity_values
        dr[self.relation_rows] = self.relation_values
        return de, dr


class GradAccumulator:
    """Collects scattered row gradients and coalesces them into a SparseGrad."""

    def __init__(self, ent_width: int, rel_width: int):
        self._ent: list = []
        self._rel: list = []
        self._dense_ent = None
        self._dense_rel = None
        self.ent_width = ent_width
        self.rel_width = rel_width

    def add_entity(self, rows, values):
        rows = np.asarray(rows).reshape(-1)
        self._ent.append((rows, np.asarray(values).reshape(len(rows), self.ent_width)))

    def add_relation(self, rows, values):
        rows = np.asarray(rows).reshape(-1)
        self._rel.append((rows, np.asarray(values).reshape(len(rows), self.rel_width)))

    def add_entity_dense(self, values):
        self._dense_ent = values if self._dense_ent is None else self._dense_ent + values

    @staticmethod
    def _coalesce(parts, width, dense=None):
        if not parts:
            if dense is not None:
                return np.arange(len(dense)), dense
            return np.zeros(0, np.int64), np.zeros((0, width))
        rows = np.concatenate([p[0] for p in parts])
        vals = np.concatenate([p[1] for p in parts])
        uniq, inv = np.unique(rows, return_inverse=True)
        if vals.size <= 1 << 15:
            summed = np.zeros((len(uniq), width))
            np.add.at(summed, inv, vals)
        else:
            # a sparse selector matrix sums large batches far faster than ufunc.at
            selector = sparse.csr_matrix((np.ones(len(rows)), (inv, np.arange(len(rows)))),
                                         shape=(len(uniq), len(rows)))
            summed = np.asarray(selector @ vals)
        if dense is not None:
            out = dense.copy()
            out[uniq] += summed
            return np.arange(len(out)), out
        return uniq, summed

    def result(self) -> SparseGrad:
        er, ev = self._coalesce(self._ent, self.ent_width, self._dense_ent)
        rr, rv = self._coalesce(self._rel, self.rel_width)
        return SparseGrad(er, ev, rr, rv)


def score_grad(kind, state: EmbeddingState, h, r, t, upstream: float = 1.0) -> SparseGrad:
    """Gradient of ``upstream * score(h, r, t)``, carrying only rows h, r, t."""
    sc = scorer(kind)
    _check_ids(state, h, r, t)
    h_e, r_e, t_e = state.entity[h], state.relation[r], state.entity[t]
    q = sc.tail_query(h_e, r_e)
    dq, dt = match_pairs_grad(sc.match, q, t_e, upstream)
    dh, dr = sc.tail_query_grad(h_e, r_e, dq)
    acc = GradAccumulator(state.entity.shape[1], state.relation.shape[1])
    acc.add_entity(np.atleast_1d(h), dh)
    acc.add_entity(np.atleast_1d(t), dt)
    acc.add_relation(np.atleast_1d(r), dr)
    return acc.result()
