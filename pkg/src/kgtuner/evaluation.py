"""Filtered ranking metrics for link prediction."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import KnowledgeGraph
from .models import EmbeddingState, score_batch_all_heads, score_batch_all_tails

HITS_AT = (1, 3, 10)


@dataclass
class RankResult:
    head_ranks: np.ndarray
    tail_ranks: np.ndarray

    @property
    def ranks(self) -> np.ndarray:
        return np.concatenate([self.head_ranks, self.tail_ranks])

    @property
    def mrr(self) -> float:
        return float(np.mean(1.0 / self.ranks))

    @property
    def hits(self) -> dict[int, float]:
        ranks = self.ranks
        return {k: float(np.mean(ranks <= k)) for k in HITS_AT}

    def to_dict(self) -> dict:
        out = {"mrr": self.mrr}
        out.update({f"hits@{k}": v for k, v in self.hits.items()})
        out["num_ranks"] = int(len(self.ranks))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self) -> str:
        h = self.hits
        return f"{self.mrr!r},{h[1]!r},{h[3]!r},{h[10]!r}"


CSV_HEADER = "mrr,h1,h3,h10"


def rank_metrics(ranks) -> RankResult:
    """Wrap an arbitrary rank list (counted as tail ranks) for aggregation."""
    ranks = np.asarray(ranks, dtype=np.int64)
    return RankResult(np.zeros(0, np.int64), ranks)


def filtered_ranks(kind, state: EmbeddingState, kg: KnowledgeGraph, triples, direction: str,
                   batch_size: int = 256) -> np.ndarray:
    """Filtered rank of the true head (``direction='head'``) or tail of each triple.

    ``rank = |{e : f(e) >= f(true), e's triple not in train/valid/test}| + 1``;
    ties count against the true entity. NaN scores rank last.
    """
    if direction not in ("head", "tail"):
        raise ValueError("direction must be 'head' or 'tail'")
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    index = kg.filter_index
    out = np.empty(len(triples), dtype=np.int64)
    for lo in range(0, len(triples), batch_size):
        chunk = triples[lo:lo + batch_size]
        h, r, t = chunk.T
        if direction == "tail":
            scores = score_batch_all_tails(state.kind, state, h, r).reshape(len(chunk), -1)
            true = t
            rows, ents = index.tails_batch(h, r)
        else:
            scores = score_batch_all_heads(state.kind, state, r, t).reshape(len(chunk), -1)
            true = h
            rows, ents = index.heads_batch(r, t)
        scores = np.where(np.isnan(scores), -np.inf, scores)
        idx = np.arange(len(chunk))
        target = scores[idx, true]
        ge = scores >= target[:, None]
        filtered = np.bincount(rows, weights=ge[rows, ents], minlength=len(chunk))
        # the true entity is itself a known triple and is removed by the filter
        out[lo:lo + len(chunk)] = ge.sum(axis=1) - filtered.astype(np.int64) + 1
    return out


def filtered_rank(kind, state: EmbeddingState, kg: KnowledgeGraph, triple, direction: str) -> int:
    return int(filtered_ranks(kind, state, kg, [triple], direction)[0])


def evaluate(kind, state: EmbeddingState, kg: KnowledgeGraph, split: str = "valid",
             batch_size: int = 256) -> RankResult:
    """Head and tail filtered ranks over every triple of ``split``."""
    triples = kg.split(split) if isinstance(split, str) else np.asarray(split)
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    return RankResult(
        filtered_ranks(kind, state, kg, triples, "head", batch_size),
        filtered_ranks(kind, state, kg, triples, "tail", batch_size),
    )
