"""Deterministic toy and synthetic graphs for tests, docs and desk-scale runs."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import KnowledgeGraph, load_kg_dir

TOY_DIR = Path(__file__).with_name("toy")


def toy_kg() -> KnowledgeGraph:
    """An 80-entity, 5-relation graph with learnable structure.

    Entities sit in 8 clusters of 10. Relations: a symmetric ring inside each
    cluster, a cluster-successor map and its inverse, a many-to-one "cluster
    hub" map, and a strided map. Triples are shuffled with a fixed seed and
    split 80/10/10, moving valid/test triples back to train whenever they
    would mention an entity unseen in train.
    """
    n_clusters, size = 8, 10

    def ent(c, i):
        return (c % n_clusters) * size + (i % size)

    triples = set()
    for c in range(n_clusters):
        for i in range(size):
            triples.add((ent(c, i), 0, ent(c, i + 1)))
            triples.add((ent(c, i + 1), 0, ent(c, i)))
            if c < n_clusters - 1:
                triples.add((ent(c, i), 1, ent(c + 1, i)))
                triples.add((ent(c + 1, i), 2, ent(c, i)))
            if i != 0:
                triples.add((ent(c, i), 3, ent(c, 0)))
            triples.add((ent(c, i), 4, ent(c + 3, 3 * i + 1)))
    arr = np.array(sorted(triples), dtype=np.int64)
    rng = np.random.default_rng(20220522)
    arr = arr[rng.permutation(len(arr))]
    n_eval = len(arr) // 10
    train, valid, test = arr[2 * n_eval:], arr[:n_eval], arr[n_eval:2 * n_eval]
    seen = np.zeros(n_clusters * size, dtype=bool)
    seen[train[:, 0]] = seen[train[:, 2]] = True
    kept = []
    for split in (valid, test):
        ok = seen[split[:, 0]] & seen[split[:, 2]]
        train = np.concatenate([train, split[~ok]])
        kept.append(split[ok])
    valid, test = kept
    names = tuple(f"c{e // size}_{e % size}" for e in range(n_clusters * size))
    rel_names = ("ring", "next_cluster", "prev_cluster", "hub", "stride")
    return KnowledgeGraph(n_clusters * size, 5, train, valid, test, names, rel_names)


def bundled_toy_kg() -> KnowledgeGraph:
    """The toy graph as shipped in package data (string vocabularies)."""
    return load_kg_dir(TOY_DIR)


def cycle_kg() -> KnowledgeGraph:
    """Five entities on a symmetric ring; train holds one direction, valid the other."""
    edges = [(i, (i + 1) % 5) for i in range(5)]
    train = [(a, 0, b) for a, b in edges]
    valid = [(b, 0, a) for a, b in edges]
    return KnowledgeGraph(5, 1, np.array(train), np.array(valid))


def complete_kg(n: int = 10) -> KnowledgeGraph:
    """All ordered pairs of ``n`` entities under a single relation."""
    train = [(a, 0, b) for a in range(n) for b in range(n) if a != b]
    return KnowledgeGraph(n, 1, np.array(train))


def synthetic_kg(
    num_entities: int,
    num_relations: int,
    num_train: int,
    num_valid: int = 0,
    num_test: int = 0,
    seed: int = 0,
    skew: float = 0.5,
) -> KnowledgeGraph:
    """Sparse random graph with a heavy-tailed degree distribution.

    Endpoints are drawn from a Zipf-like law over a random entity order, so
    the graph has a dense core, a long sparse tail and some isolated
    entities, which is the regime where subgraph samplers differ.
    """
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, num_entities + 1) ** skew
    weights /= weights.sum()
    order = rng.permutation(num_entities)
    total = num_train + num_valid + num_test
    keys = np.zeros(0, dtype=np.int64)
    while len(keys) < total:
        m = 2 * (total - len(keys)) + 16
        h = order[rng.choice(num_entities, size=m, p=weights)]
        t = order[rng.choice(num_entities, size=m, p=weights)]
        r = rng.integers(num_relations, size=m)
        ok = h != t
        new = (h[ok] * num_relations + r[ok]) * num_entities + t[ok]
        keys = np.concatenate([keys, new])
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
    keys = keys[:total]
    t = keys % num_entities
    hr = keys // num_entities
    arr = np.stack([hr // num_relations, hr % num_relations, t], axis=1)
    return KnowledgeGraph(
        num_entities,
        num_relations,
        arr[:num_train],
        arr[num_train:num_train + num_valid],
        arr[num_train + num_valid:],
    )
