"""Subgraph samplers used for cheap first-stage evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import KnowledgeGraph
from .errors import EmptySubgraphError

logger = logging.getLogger(__name__)

METHODS = ("multi_rw", "single_rw", "pagerank", "random_edge")


@dataclass(frozen=True)
class WalkParams:
    restart_prob: float = 0.15
    min_starts: int = 16
    start_fraction: float = 0.001
    # consecutive steps without a new entity before walkers are re-seeded
    stall_steps: int = 2000


@dataclass(frozen=True, eq=False)
class Subgraph:
    """Train triples induced on a sampled entity set, re-indexed from 0.

    ``entity_map[i]`` is the full-graph id of subgraph entity ``i``.
    """

    entity_map: np.ndarray
    triples: np.ndarray
    sub_train: np.ndarray
    sub_valid: np.ndarray
    num_relations: int
    method: str
    ratio: float
    seed: int

    @property
    def num_entities(self) -> int:
        return len(self.entity_map)

    def to_kg(self) -> KnowledgeGraph:
        return KnowledgeGraph(self.num_entities, self.num_relations, self.sub_train, self.sub_valid)

    def descriptor(self) -> dict:
        return {
            "method": self.method,
            "ratio": self.ratio,
            "seed": self.seed,
            "num_entities": self.num_entities,
            "num_triples": len(self.triples),
        }

    def __eq__(self, other):
        if not isinstance(other, Subgraph):
            return NotImplemented
        return (
            self.descriptor() == other.descriptor()
            and np.array_equal(self.entity_map, other.entity_map)
            and np.array_equal(self.sub_train, other.sub_train)
            and np.array_equal(self.sub_valid, other.sub_valid)
        )


def _undirected_adjacency(kg: KnowledgeGraph):
    src = np.concatenate([kg.train[:, 0], kg.train[:, 2]])
    dst = np.concatenate([kg.train[:, 2], kg.train[:, 0]])
    order = np.argsort(src, kind="stable")
    deg = np.bincount(src, minlength=kg.num_entities)
    ptr = np.zeros(kg.num_entities + 1, dtype=np.int64)
    np.cumsum(deg, out=ptr[1:])
    return ptr, dst[order], deg


def _target_count(kg: KnowledgeGraph, ratio: float) -> int:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"entity_ratio must be in (0, 1), got {ratio}")
    target = int(round(ratio * kg.num_entities))
    if target < 2:
        raise EmptySubgraphError(f"ratio {ratio} selects fewer than 2 of {kg.num_entities} entities")
    return target


def _random_walk(kg, target, rng, n_starts, params: WalkParams) -> np.ndarray:
    ptr, nbr, deg = _undirected_adjacency(kg)
    candidates = np.flatnonzero(deg > 0)
    if target > len(candidates):
        logger.warning("target %d exceeds %d connected entities; capping", target, len(candidates))
        target = len(candidates)
    n_starts = min(n_starts, len(candidates))
    starts = [int(x) for x in rng.choice(candidates, size=n_starts, replace=False)]
    pos = list(starts)
    ptr_l, deg_l = ptr.tolist(), deg.tolist()
    visited = np.zeros(kg.num_entities, dtype=bool)
    count = 0
    stall = 0
    restart = params.restart_prob
    chunk = 1 << 16
    u = rng.random(chunk)
    k = 0
    while count < target:
        for w in range(len(pos)):
            if k + 2 > chunk:
                u = rng.random(chunk)
                k = 0
            cur = pos[w]
            if u[k] < restart:
                pos[w] = starts[w]
                k += 1
                stall += 1
                continue
            nxt = int(nbr[ptr_l[cur] + int(u[k + 1] * deg_l[cur])])
            k += 2
            pos[w] = nxt
            stall += 1
            for e in (cur, nxt):
                if not visited[e]:
                    visited[e] = True
                    count += 1
                    stall = 0
            if count >= target:
                break
        if stall > params.stall_steps:
            fresh = candidates[~visited[candidates]]
            if len(fresh) == 0:
                break
            take = min(len(pos), len(fresh))
            starts = [int(x) for x in rng.choice(fresh, size=take, replace=False)]
            pos = list(starts)
            stall = 0
    return np.flatnonzero(visited)


def _pagerank_entities(kg, target, damping=0.85, iterations=50) -> np.ndarray:
    ptr, nbr, deg = _undirected_adjacency(kg)
    n = kg.num_entities
    src = np.repeat(np.arange(n), deg)
    pr = np.full(n, 1.0 / n)
    inv_deg = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
    for _ in range(iterations):
        share = pr * inv_deg
        nxt = np.bincount(nbr, weights=share[src], minlength=n)
        dangling = pr[deg == 0].sum()
        pr = (1 - damping) / n + damping * (nxt + dangling / n)
    order = np.argsort(-pr, kind="stable")
    selected = np.zeros(n, dtype=bool)
    covered = np.zeros(n, dtype=bool)
    count = 0
    for v in order:
        if deg[v] == 0:
            break
        selected[v] = True
        neigh = nbr[ptr[v]:ptr[v + 1]]
        hit = neigh[selected[neigh]]
        if len(hit):
            newly = hit[~covered[hit]]
            covered[newly] = True
            count += len(np.unique(newly))
            if not covered[v]:
                covered[v] = True
                count += 1
        if count >= target:
            break
    return np.flatnonzero(covered)


def _random_edge_entities(kg, target, rng) -> np.ndarray:
    perm = rng.permutation(len(kg.train))
    seq = kg.train[perm][:, [0, 2]].ravel()
    _, first = np.unique(seq, return_index=True)
    is_new = np.zeros(len(seq), dtype=np.int64)
    is_new[first] = 1
    per_edge = is_new.reshape(-1, 2).sum(axis=1)
    cum = np.cumsum(per_edge)
    k = int(np.searchsorted(cum, min(target, cum[-1])))
    return np.unique(seq[: 2 * (k + 1)])


def sample_subgraph(
    kg: KnowledgeGraph,
    method: str = "multi_rw",
    entity_ratio: float = 0.2,
    seed: int = 0,
    walk: WalkParams | None = None,
) -> Subgraph:
    """Sample an entity set and return the train triples it induces.

    The induced triples are split 9:1 into ``sub_train``/``sub_valid`` by a
    uniform shuffle under ``seed``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown sampling method {method!r}; expected one of {METHODS}")
    walk = walk or WalkParams()
    target = _target_count(kg, entity_ratio)
    rng = np.random.default_rng(seed)
    if method == "multi_rw":
        n_starts = max(walk.min_starts, int(np.ceil(walk.start_fraction * kg.num_entities)))
        entities = _random_walk(kg, target, rng, n_starts, walk)
    elif method == "single_rw":
        entities = _random_walk(kg, target, rng, 1, walk)
    elif method == "pagerank":
        entities = _pagerank_entities(kg, target)
    else:
        entities = _random_edge_entities(kg, target, rng)

    inside = np.zeros(kg.num_entities, dtype=bool)
    inside[entities] = True
    induced = kg.train[inside[kg.train[:, 0]] & inside[kg.train[:, 2]]]
    if len(induced) == 0:
        raise EmptySubgraphError(f"{method} at ratio {entity_ratio} induced no triples")
    # drop sampled entities that ended up without an induced triple
    used = np.unique(induced[:, [0, 2]])
    remap = np.full(kg.num_entities, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    triples = np.stack([remap[induced[:, 0]], induced[:, 1], remap[induced[:, 2]]], axis=1)
    perm = rng.permutation(len(triples))
    n_valid = int(round(len(triples) / 10))
    sub_valid = triples[perm[:n_valid]]
    sub_train = triples[perm[n_valid:]]
    return Subgraph(
        entity_map=used,
        triples=triples,
        sub_train=sub_train,
        sub_valid=sub_valid,
        num_relations=kg.num_relations,
        method=method,
        ratio=entity_ratio,
        seed=seed,
    )
