"""Negative sampling: uniform corruption and the all-entity 1VsAll/kVsAll modes."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..data import FilterIndex

logger = logging.getLogger(__name__)

UNIFORM_SIZES = (32, 128, 512, 2048)
MAX_REJECTIONS = 100


@dataclass(frozen=True)
class NegSampling:
    kind: str  # "uniform", "1VsAll" or "kVsAll"
    m: int | None = None

    def __post_init__(self):
        if self.kind == "uniform":
            if self.m is None or self.m < 1:
                raise ValueError("uniform negative sampling needs m >= 1")
        elif self.kind in ("1VsAll", "kVsAll"):
            if self.m is not None:
                raise ValueError(f"{self.kind} takes no sample size")
        else:
            raise ValueError(f"unknown negative sampling {self.kind!r}")

    @classmethod
    def parse(cls, value) -> "NegSampling":
        """Accept the search-space encoding: an int size or ``1VsAll``/``kVsAll``."""
        if isinstance(value, NegSampling):
            return value
        if isinstance(value, str) and value.lower() in ("1vsall", "kvsall"):
            return cls("1VsAll" if value.lower() == "1vsall" else "kVsAll")
        return cls("uniform", int(value))

    @property
    def all_entities(self) -> bool:
        return self.kind != "uniform"

    def to_value(self):
        return self.m if self.kind == "uniform" else self.kind


@dataclass
class UniformNegatives:
    """``triples[B, m, 3]`` of corrupted triples; ``slot[B, m]`` is the replaced column (0 or 2)."""

    triples: np.ndarray
    slot: np.ndarray
    forced: int = 0


@dataclass
class AllEntityNegatives:
    """Every entity is a candidate in ``slot``; ``positive_mask`` marks the positive part.

    ``slot`` is 0 for head corruption and 2 for tail corruption (one per row).
    """

    queries: np.ndarray
    slot: np.ndarray
    positive_mask: np.ndarray

    @property
    def negative_mask(self) -> np.ndarray:
        return ~self.positive_mask


def _corrupt_uniform(triples, m, num_entities, index: FilterIndex | None, rng, slot=None):
    B = len(triples)
    out = np.repeat(triples[:, None, :], m, axis=1)
    if slot is None:
        col = np.where(rng.random((B, m)) < 0.5, 0, 2)
    else:
        col = np.full((B, m), 0 if slot in ("head", 0) else 2)
    rows, cols = np.nonzero(np.ones((B, m), dtype=bool))
    out[rows, cols, col.ravel()] = rng.integers(num_entities, size=B * m)
    forced = 0
    if index is not None:
        for _ in range(MAX_REJECTIONS):
            bad = index.contains(out[..., 0], out[..., 1], out[..., 2])
            n_bad = int(bad.sum())
            if n_bad == 0:
                break
            bi, bj = np.nonzero(bad)
            out[bi, bj, col[bi, bj]] = rng.integers(num_entities, size=n_bad)
        else:
            forced = int(index.contains(out[..., 0], out[..., 1], out[..., 2]).sum())
            if forced:
                logger.debug("kept %d true triples as negatives after %d rejections", forced, MAX_REJECTIONS)
    return out, col, forced


def sample_negatives_batch(triples, neg: NegSampling, num_entities: int, train_index: FilterIndex, rng,
                           slot=None):
    """Negatives for a batch of positive training triples.

    Uniform sampling replaces the head or tail (fair coin per sample) and
    re-draws corruptions that are training triples, up to ``MAX_REJECTIONS``
    rounds. The all-entity modes emit one head query and one tail query per
    triple.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if neg.kind == "uniform":
        out, col, forced = _corrupt_uniform(triples, neg.m, num_entities, train_index, rng, slot)
        return UniformNegatives(out, col, forced)
    B = len(triples)
    if slot is None:
        queries = np.concatenate([triples, triples])
        slots = np.concatenate([np.full(B, 2), np.full(B, 0)])
    else:
        queries = triples
        slots = np.full(B, 0 if slot in ("head", 0) else 2)
    mask = np.zeros((len(queries), num_entities), dtype=bool)
    if neg.kind == "1VsAll":
        idx = np.arange(len(queries))
        mask[idx, np.where(slots == 2, queries[:, 2], queries[:, 0])] = True
    else:
        tail_rows = np.flatnonzero(slots == 2)
        head_rows = np.flatnonzero(slots == 0)
        rows, ents = train_index.tails_batch(queries[tail_rows, 0], queries[tail_rows, 1])
        mask[tail_rows[rows], ents] = True
        rows, ents = train_index.heads_batch(queries[head_rows, 1], queries[head_rows, 2])
        mask[head_rows[rows], ents] = True
        # the positive itself is always in the positive part
        mask[np.arange(len(queries)), np.where(slots == 2, queries[:, 2], queries[:, 0])] = True
    return AllEntityNegatives(queries, slots, mask)


def sample_negatives(kg, triple, neg: NegSampling, rng, slot=None):
    """Negative specification for a single training triple of ``kg``."""
    neg = NegSampling.parse(neg)
    return sample_negatives_batch(np.asarray([triple]), neg, kg.num_entities, kg.train_index, rng, slot)
