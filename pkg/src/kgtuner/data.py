"""Triple stores, vocabularies and filtered-ranking indexes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidDatasetError, ParseError

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def _as_triples(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"triples must have shape (n, 3), got {arr.shape}")
    return arr


class FilterIndex:
    """Maps (head, relation) to its true tails and (relation, tail) to its true heads.

    Stored as two CSR tables keyed by ``head * R + relation`` and
    ``relation * E + tail`` so that batched lookups stay vectorized.
    """

    def __init__(self, triples: np.ndarray, num_entities: int, num_relations: int):
        triples = _as_triples(triples)
        if len(triples):
            triples = np.unique(triples, axis=0)
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.num_triples = len(triples)
        h, r, t = triples.T
        self._hr_keys, self._hr_ptr, self._hr_vals = self._csr(h * num_relations + r, t)
        self._rt_keys, self._rt_ptr, self._rt_vals = self._csr(r * num_entities + t, h)
        self._triple_keys = np.sort(self.triple_key(h, r, t))

    @staticmethod
    def _csr(keys, values):
        order = np.lexsort((values, keys))
        keys, values = keys[order], values[order]
        uniq, starts = np.unique(keys, return_index=True)
        ptr = np.append(starts, len(keys)).astype(np.int64)
        return uniq, ptr, values

    def triple_key(self, h, r, t):
        h, r, t = (np.asarray(x, dtype=np.int64) for x in (h, r, t))
        return (h * self.num_relations + r) * self.num_entities + t

    def contains(self, h, r, t) -> np.ndarray:
        keys = self.triple_key(h, r, t)
        if len(self._triple_keys) == 0:
            return np.zeros(np.shape(keys), dtype=bool)
        pos = np.minimum(np.searchsorted(self._triple_keys, keys), len(self._triple_keys) - 1)
        return self._triple_keys[pos] == keys

    @staticmethod
    def _lookup(keys_table, ptr, vals, keys):
        keys = np.atleast_1d(np.asarray(keys, dtype=np.int64))
        if len(keys_table) == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        safe = np.minimum(np.searchsorted(keys_table, keys), len(keys_table) - 1)
        found = keys_table[safe] == keys
        starts = np.where(found, ptr[safe], 0)
        lengths = np.where(found, ptr[safe + 1] - ptr[safe], 0)
        rows = np.repeat(np.arange(len(keys)), lengths)
        offsets = np.arange(len(rows)) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        return rows, vals[np.repeat(starts, lengths) + offsets]

    def tails(self, h: int, r: int) -> np.ndarray:
        """True tails of ``(h, r, ?)``."""
        return self.tails_batch([h], [r])[1]

    def heads(self, r: int, t: int) -> np.ndarray:
        """True heads of ``(?, r, t)``."""
        return self.heads_batch([r], [t])[1]

    def tails_batch(self, h, r):
        """Return ``(row, entity)`` pairs listing true tails for each query row."""
        keys = np.asarray(h, dtype=np.int64) * self.num_relations + np.asarray(r, dtype=np.int64)
        return self._lookup(self._hr_keys, self._hr_ptr, self._hr_vals, keys)

    def heads_batch(self, r, t):
        keys = np.asarray(r, dtype=np.int64) * self.num_entities + np.asarray(t, dtype=np.int64)
        return self._lookup(self._rt_keys, self._rt_ptr, self._rt_vals, keys)

    def mask(self, rows_entities, num_rows: int) -> np.ndarray:
        rows, ents = rows_entities
        out = np.zeros((num_rows, self.num_entities), dtype=bool)
        out[rows, ents] = True
        return out


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Integer-encoded knowledge graph with train/valid/test splits.

    Instances are immutable; derived indexes are computed lazily and cached.
    """

    num_entities: int
    num_relations: int
    train: np.ndarray
    valid: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    entity_names: tuple[str, ...] | None = None
    relation_names: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in SPLITS:
            arr = _as_triples(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.train) == 0:
            raise InvalidDatasetError("train split is empty")
        for name in SPLITS:
            arr = getattr(self, name)
            if len(arr) == 0:
                continue
            if arr.min() < 0:
                raise InvalidDatasetError(f"negative id in {name} split")
            if arr[:, [0, 2]].max() >= self.num_entities:
                raise InvalidDatasetError(f"entity id out of range in {name} split")
            if arr[:, 1].max() >= self.num_relations:
                raise InvalidDatasetError(f"relation id out of range in {name} split")
        keys = [self._keys(getattr(self, name)) for name in SPLITS]
        for i in range(3):
            for j in range(i + 1, 3):
                if np.intersect1d(keys[i], keys[j]).size:
                    raise InvalidDatasetError(f"splits {SPLITS[i]} and {SPLITS[j]} share triples")

    def _keys(self, arr):
        return (arr[:, 0] * self.num_relations + arr[:, 1]) * self.num_entities + arr[:, 2]

    @cached_property
    def filter_index(self) -> FilterIndex:
        """Index over train, valid and test, used for filtered ranking."""
        return FilterIndex(np.concatenate([self.train, self.valid, self.test]), self.num_entities, self.num_relations)

    @cached_property
    def train_index(self) -> FilterIndex:
        return FilterIndex(self.train, self.num_entities, self.num_relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def stats(self) -> dict:
        return {
            "num_entities": self.num_entities,
            "num_relations": self.num_relations,
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
        }


def _read_triples(path) -> list[tuple[str, str, str]]:
    rows = []
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.rstrip("\n").rstrip("\r")
            if not stripped.strip():
                continue
            parts = stripped.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, stripped)
            rows.append((parts[0].strip(), parts[1].strip(), parts[2].strip()))
    return rows


def load_kg(train_path, valid_path=None, test_path=None) -> KnowledgeGraph:
    """Load a knowledge graph from three tab-separated triple files.

    Entity and relation ids are assigned in order of first appearance,
    scanning train, then valid, then test. Missing valid/test paths are
    treated as empty splits.
    """
    raw = [_read_triples(p) if p is not None else [] for p in (train_path, valid_path, test_path)]
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    encoded = []
    for rows in raw:
        arr = np.zeros((len(rows), 3), dtype=np.int64)
        for i, (h, r, t) in enumerate(rows):
            arr[i, 0] = entities.setdefault(h, len(entities))
            arr[i, 1] = relations.setdefault(r, len(relations))
            arr[i, 2] = entities.setdefault(t, len(entities))
        encoded.append(arr)
    if len(encoded[0]) == 0:
        raise InvalidDatasetError(f"train split {train_path} is empty")
    deduped = []
    for name, arr in zip(SPLITS, encoded):
        if len(arr):
            uniq, first = np.unique(arr, axis=0, return_index=True)
            if len(uniq) < len(arr):
                logger.warning("dropped %d duplicate triples from %s", len(arr) - len(uniq), name)
                arr = arr[np.sort(first)]
        deduped.append(arr)
    return KnowledgeGraph(
        num_entities=len(entities),
        num_relations=len(relations),
        train=deduped[0],
        valid=deduped[1],
        test=deduped[2],
        entity_names=tuple(entities),
        relation_names=tuple(relations),
    )


def load_kg_dir(directory) -> KnowledgeGraph:
    """Load ``train.txt``/``valid.txt``/``test.txt`` from a benchmark directory."""
    d = Path(directory)
    valid = d / "valid.txt"
    test = d / "test.txt"
    return load_kg(d / "train.txt", valid if valid.exists() else None, test if test.exists() else None)


def write_vocab(kg: KnowledgeGraph, directory) -> None:
    """Write ``entities.dict`` and ``relations.dict`` ("id<TAB>name" per line)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ents = kg.entity_names or tuple(str(i) for i in range(kg.num_entities))
    rels = kg.relation_names or tuple(str(i) for i in range(kg.num_relations))
    for fname, names in (("entities.dict", ents), ("relations.dict", rels)):
        with open(d / fname, "w", encoding="utf-8") as fh:
            fh.writelines(f"{i}\t{name}\n" for i, name in enumerate(names))


def read_vocab(path) -> list[str]:
    names = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            idx, name = line.rstrip("\n").split("\t", 1)
            if int(idx) != len(names):
                raise InvalidDatasetError(f"{path}: ids must be contiguous from 0")
            names.append(name)
    return names


def write_triples(kg: KnowledgeGraph, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ents = kg.entity_names or tuple(f"e{i}" for i in range(kg.num_entities))
    rels = kg.relation_names or tuple(f"r{i}" for i in range(kg.num_relations))
    for name in SPLITS:
        with open(d / f"{name}.txt", "w", encoding="utf-8") as fh:
            for h, r, t in kg.split(name):
                fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


def add_inverse_relations(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Append ``(t, r + R, h)`` for every training triple.

    Not idempotent: applying it twice doubles the relation vocabulary again.
    Valid and test splits are left unchanged.
    """
    R = kg.num_relations
    inv = kg.train[:, [2, 1, 0]].copy()
    inv[:, 1] += R
    names = None
    if kg.relation_names is not None:
        names = kg.relation_names + tuple(f"{n}_inv" for n in kg.relation_names)
    return KnowledgeGraph(
        num_entities=kg.num_entities,
        num_relations=2 * R,
        train=np.concatenate([kg.train, inv]),
        valid=kg.valid,
        test=kg.test,
        entity_names=kg.entity_names,
        relation_names=names,
    )


def from_triples(triples: Sequence, valid: Iterable = (), test: Iterable = ()) -> KnowledgeGraph:
    """Build a graph from integer triples, inferring vocabulary sizes."""
    splits = [_as_triples(list(x)) for x in (triples, valid, test)]
    allt = np.concatenate(splits)
    return KnowledgeGraph(
        num_entities=int(allt[:, [0, 2]].max()) + 1,
        num_relations=int(allt[:, 1].max()) + 1,
        train=splits[0],
        valid=splits[1],
        test=splits[2],
    )
