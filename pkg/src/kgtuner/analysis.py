"""Control-variate sweeps, rank-consistency statistics, sampler comparison and cost profiling."""
from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import qmc, rankdata

from .data import KnowledgeGraph
from .sampling import METHODS, sample_subgraph
from .space import (HpConfig, SearchSpace, discretized_values, full_space, latent_config, materialize,
                    parse_scalar, validate)
from .training.loop import TrainConfig, TrialBudget, train_trial

logger = logging.getLogger(__name__)

DEFAULT_ANCHORS = 175


@dataclass(frozen=True)
class AnchorSet:
    """Anchor configurations for sweeping one HP; the swept HP's slot is free."""
    hp: str
    anchors: tuple
    values: tuple
    space: SearchSpace

    def __len__(self) -> int:
        return len(self.anchors)

    def config(self, anchor: int, value_index: int) -> HpConfig:
        latent = dict(self.anchors[anchor])
        latent[self.hp] = self.values[value_index]
        return materialize(self.space, latent)


def _anchor_space(space: SearchSpace, hp: str) -> SearchSpace:
    """Restrict the parent of a conditional HP so the HP is always active."""
    cond = space[hp].condition
    if cond is None:
        return space
    parent = space[cond.parent]
    keep = tuple(o for o in parent.options if (o in cond.values) != cond.negate)
    descs = tuple(replace(d, options=keep) if d.name == parent.name else d for d in space.descriptors)
    return SearchSpace(descs, space.variant, space.grid, space.model)


def gen_anchors(space: SearchSpace | None, hp, n: int = DEFAULT_ANCHORS, seed: int = 0,
                values: Sequence | None = None) -> AnchorSet:
    """Quasi-random anchors from a scrambled Sobol sequence over the space.

    ``hp`` is an HP name or its index in the space. Anchors keep a latent value
    for every conditional HP, so substituting any swept value yields a valid
    config.
    """
    if n < 2:
        raise ValueError("need at least two anchors")
    space = space or full_space()
    name = space.descriptors[hp].name if isinstance(hp, int) else hp
    space[name]
    values = tuple(values) if values is not None else discretized_values(name, space)
    anchor_space = _anchor_space(space, name)
    sobol = qmc.Sobol(d=len(anchor_space.descriptors), scramble=True, seed=seed)
    points = sobol.random_base2(max(1, math.ceil(math.log2(n))))[:n]
    anchors = tuple(latent_config(anchor_space, u) for u in points)
    result = AnchorSet(name, anchors, values, anchor_space)
    for a in range(n):
        for j in range(len(values)):
            bad = validate(result.config(a, j), space)
            if bad:
                raise AssertionError(f"anchor {a} with {name}={values[j]!r} is invalid: {bad}")
    return result


@dataclass
class SweepResult:
    hp: str
    values: tuple
    metric: np.ndarray
    cost: np.ndarray

    @property
    def n_anchors(self) -> int:
        return self.metric.shape[0]

    def value_index(self, value) -> int:
        for i, v in enumerate(self.values):
            if v == value and type(v) is type(value):
                return i
        raise KeyError(value)


def cost_per_kilo_step(train_seconds: float, steps: int) -> float:
    return 1000.0 * train_seconds / steps if steps else float("nan")


def _sweep_cell(args):
    kg, model, config, epochs, seed, budget = args
    tc = TrainConfig.from_hp(model, config, epochs=epochs, seed=seed)
    res = train_trial(kg, tc, budget)
    return res.metric, cost_per_kilo_step(res.train_seconds, res.steps)


def sweep(kg: KnowledgeGraph, anchors: AnchorSet, model, epochs: int = 50, seed: int = 0,
          budget: TrialBudget | None = None, workers: int = 1) -> SweepResult:
    """Train every (anchor, value) cell; one training seed per anchor row."""
    budget = budget or TrialBudget()
    jobs = []
    for a in range(len(anchors)):
        row_seed = int(np.random.SeedSequence([seed, a]).generate_state(1)[0])
        for j in range(len(anchors.values)):
            jobs.append((kg, model, anchors.config(a, j), epochs, row_seed, budget))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            cells = list(pool.map(_sweep_cell, jobs))
    else:
        cells = [_sweep_cell(j) for j in jobs]
    shape = (len(anchors), len(anchors.values))
    metric = np.array([c[0] for c in cells]).reshape(shape)
    cost = np.array([c[1] for c in cells]).reshape(shape)
    return SweepResult(anchors.hp, anchors.values, metric, cost)


def descending_ranks(column) -> np.ndarray:
    """Rank 1 for the best metric; ties share their average rank."""
    return rankdata(-np.asarray(column, dtype=float), method="average")


def rank_correlation(a, b, textbook: bool = False) -> float:
    """``1 - sum d^2 / (n (n^2 - 1))`` over descending ranks; ``textbook`` adds Spearman's factor 6."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(a)
    if n < 2 or len(b) != n:
        raise ValueError("need two equal-length columns with at least two entries")
    d = descending_ranks(a) - descending_ranks(b)
    factor = 6.0 if textbook else 1.0
    return float(1.0 - factor * np.sum(d * d) / (n * (n * n - 1)))


def srcc(result: SweepResult, value_pair, textbook: bool = False) -> float:
    """Rank agreement of the anchors under two values of the swept HP.

    ``value_pair`` holds two value indices into ``result.values``.
    """
    i, j = value_pair
    return rank_correlation(result.metric[:, i], result.metric[:, j], textbook)


def consistency(result: SweepResult, textbook: bool = False) -> float:
    """Mean srcc over all pairs of distinct values."""
    pairs = list(itertools.combinations(range(len(result.values)), 2))
    if not pairs:
        return 1.0
    return float(np.mean([srcc(result, p, textbook) for p in pairs]))


def srcc_matrix(result: SweepResult, textbook: bool = False) -> np.ndarray:
    k = len(result.values)
    out = np.ones((k, k))
    for i, j in itertools.combinations(range(k), 2):
        out[i, j] = out[j, i] = srcc(result, (i, j), textbook)
    return out


def ranking_distribution(result: SweepResult) -> np.ndarray:
    """``hist[v, r]``: number of anchors where value ``v`` ranks ``r + 1``.

    Values tied on an anchor share the ranks they jointly occupy, each
    receiving an equal fraction of every such rank.
    """
    k = len(result.values)
    hist = np.zeros((k, k))
    for row in result.metric:
        order = np.argsort(-row, kind="stable")
        pos = 0
        while pos < k:
            end = pos + 1
            while end < k and row[order[end]] == row[order[pos]]:
                end += 1
            members = order[pos:end]
            hist[np.ix_(members, np.arange(pos, end))] += 1.0 / len(members)
            pos = end
    return hist


def compare_samplers(kg: KnowledgeGraph, model, probe_configs: Sequence[Mapping], ratio: float = 0.2,
                     methods: Sequence[str] = METHODS, seed: int = 0, epochs: int = 50,
                     budget: TrialBudget | None = None, textbook: bool = False) -> dict:
    """Rank correlation between subgraph and full-graph metrics of probe configs, per sampler.

    At ``ratio`` 1.0 every sampler returns the full graph itself.
    """
    if len(probe_configs) < 5:
        raise ValueError("need at least five probe configurations")
    budget = budget or TrialBudget()
    seeds = [int(np.random.SeedSequence([seed, i]).generate_state(1)[0]) for i in range(len(probe_configs))]

    def metrics_on(graph):
        return [train_trial(graph, TrainConfig.from_hp(model, c, epochs=epochs, seed=s), budget).metric
                for c, s in zip(probe_configs, seeds)]

    full = metrics_on(kg)
    out = {"full": full, "methods": {}}
    for method in methods:
        if ratio >= 1.0:
            graph, desc = kg, {"method": method, "ratio": 1.0, "seed": seed}
        else:
            sub = sample_subgraph(kg, method, ratio, seed)
            graph, desc = sub.to_kg(), sub.descriptor()
        sub_metrics = metrics_on(graph)
        out["methods"][method] = {
            "srcc": rank_correlation(sub_metrics, full, textbook),
            "metrics": sub_metrics,
            "subgraph": desc,
        }
    return out


CSV_FIELDS = ("anchor_id", "value", "metric", "cost_per_kilo_iter")


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for a in range(result.n_anchors):
            for j, v in enumerate(result.values):
                w.writerow([a, v, repr(float(result.metric[a, j])), repr(float(result.cost[a, j]))])


def read_sweep_csv(path, hp: str = "") -> SweepResult:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            rows.append((int(row["anchor_id"]), parse_scalar(row["value"]), float(row["metric"]),
                         float(row["cost_per_kilo_iter"])))
    values = []
    for _, v, _, _ in rows:
        if not any(v == u and type(v) is type(u) for u in values):
            values.append(v)
    anchors = sorted({a for a, _, _, _ in rows})
    a_index = {a: i for i, a in enumerate(anchors)}
    metric = np.full((len(anchors), len(values)), np.nan)
    cost = np.full_like(metric, np.nan)
    for a, v, m, c in rows:
        j = next(i for i, u in enumerate(values) if v == u and type(v) is type(u))
        metric[a_index[a], j] = m
        cost[a_index[a], j] = c
    if np.isnan(metric).any():
        raise ValueError(f"{path}: sweep grid is incomplete")
    return SweepResult(hp, tuple(values), metric, cost)


def cost_summary(result: SweepResult) -> dict:
    """Mean and standard deviation of per-kilo-iteration cost for each value."""
    return {
        str(v): {"mean": float(np.nanmean(result.cost[:, j])), "std": float(np.nanstd(result.cost[:, j]))}
        for j, v in enumerate(result.values)
    }
