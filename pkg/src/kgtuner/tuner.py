"""Two-stage search: explore on a sampled subgraph, then fine-tune top configs on the full graph."""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import KnowledgeGraph
from .errors import StageFailure
from .evaluation import evaluate
from .models import ModelKind
from .sampling import Subgraph, sample_subgraph
from .space import HpConfig, SearchSpace, decoupled_space, encode, promote_stage2
from .surrogate import (DEFAULT_TAU, N_CANDIDATES, WARM_START, Forest, TrialRecord, bore_labels,
                        propose_random, propose_next, rf_fit)
from .training.loop import TrainConfig, TrialBudget, train_trial

logger = logging.getLogger(__name__)

ALGOS = ("kgtuner", "random")
TOP_K = 10


@dataclass(frozen=True)
class Budget:
    """Search budget as a trial count or wall-clock seconds, split across two stages."""
    kind: str
    amount: float
    stage1_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in ("trials", "seconds"):
            raise ValueError(f"budget kind must be 'trials' or 'seconds', got {self.kind!r}")
        if not self.amount > 0:
            raise ValueError("budget must be positive")
        if not 0.0 < self.stage1_fraction < 1.0:
            raise ValueError("stage1_fraction must lie in (0, 1)")
        if self.kind == "trials" and int(self.amount) != self.amount:
            raise ValueError("trial budget must be an integer")

    @classmethod
    def parse(cls, text: str, stage1_fraction: float = 0.5) -> "Budget":
        """``trials:N`` or ``seconds:S``."""
        kind, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"budget must look like 'trials:20' or 'seconds:600', got {text!r}")
        amount = int(value) if kind == "trials" else float(value)
        return cls(kind, amount, stage1_fraction)

    def split(self) -> tuple[float, float]:
        if self.kind == "trials":
            n1 = int(round(self.amount * self.stage1_fraction))
            return n1, int(self.amount) - n1
        s1 = self.amount * self.stage1_fraction
        return s1, self.amount - s1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SearchSettings:
    model: str
    seed: int = 0
    algo: str = "kgtuner"
    sampler: str = "multi_rw"
    ratio: float = 0.2
    tau: float = DEFAULT_TAU
    tau_mode: str = "quantile"
    n_candidates: int = N_CANDIDATES
    warm_start: int = WARM_START
    top_k: int = TOP_K
    epochs: int = 400
    eval_every: int = 10
    patience: int = 5
    final_epochs: int | None = None
    final_include_valid: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind.parse(self.model).value)
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def trial_budget(self) -> TrialBudget:
        return TrialBudget(eval_every=self.eval_every, patience=self.patience)

    def to_dict(self) -> dict:
        return asdict(self)


def _trial_seed(seed: int, stage: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, stage, index]).generate_state(1)[0])


def _proposal_rng(seed: int, stage: int, index: int):
    # counter-based: a resumed search draws exactly what an uninterrupted one would
    return np.random.default_rng([seed, stage, index, 1])


def _evaluate_config(kg: KnowledgeGraph, model: str, config: HpConfig, settings: SearchSettings,
                     seed: int):
    tc = TrainConfig.from_hp(model, config, epochs=settings.epochs, seed=seed)
    return train_trial(kg, tc, settings.trial_budget)


def _evaluate_job(args):
    return _evaluate_config(*args)


class Checkpoint:
    """On-disk search state: deterministic history, timings, forest and progress."""

    HISTORY = "history.jsonl"
    TIMINGS = "timings.jsonl"
    STATE = "state.json"
    FOREST = "forest.json"

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)

    def append(self, record: TrialRecord) -> None:
        with open(self.dir / self.HISTORY, "a", encoding="utf-8") as fh:
            fh.write(record.to_json(timing=False) + "\n")
        with open(self.dir / self.TIMINGS, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"trial": record.trial, "stage": record.stage, "seconds": record.seconds,
                                 "train_seconds": record.train_seconds}) + "\n")

    def save_state(self, state: dict) -> None:
        self._atomic_write(self.STATE, json.dumps(state, indent=2, sort_keys=True))

    def save_forest(self, forest: Forest | None) -> None:
        if forest is not None:
            self._atomic_write(self.FOREST, json.dumps(forest.to_dict()))

    def _atomic_write(self, name: str, text: str) -> None:
        tmp = self.dir / (name + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, self.dir / name)

    def load_state(self) -> dict | None:
        path = self.dir / self.STATE
        return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None

    def load_records(self) -> list[tuple[dict, dict]]:
        """History rows paired with timing rows; a torn final line is dropped."""
        rows = _read_jsonl(self.dir / self.HISTORY)
        times = {(t["stage"], t["trial"]): t for t in _read_jsonl(self.dir / self.TIMINGS)}
        return [(r, times.get((r["stage"], r["trial"]), {})) for r in rows]

    def truncate(self, keep: int) -> None:
        """Keep only the first ``keep`` history rows (drop rows past the saved state)."""
        path = self.dir / self.HISTORY
        if path.exists():
            rows = _read_jsonl(path)[:keep]
            self._atomic_write(self.HISTORY, "".join(json.dumps(r) + "\n" for r in rows))


def _read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError:
            logger.warning("ignoring torn line in %s", path)
            break
    return out


@dataclass
class StageResult:
    records: list = field(default_factory=list)
    forest: Forest | None = None
    seconds: float = 0.0


def _top_configs(records: Sequence[TrialRecord], k: int) -> list[HpConfig]:
    """Highest-metric distinct configs; ties keep the earlier trial."""
    order = sorted(range(len(records)), key=lambda i: (-records[i].metric, i))
    out, seen = [], set()
    for i in order:
        cfg = records[i].config
        if cfg not in seen:
            seen.add(cfg)
            out.append(cfg)
        if len(out) == k:
            break
    return out


def _run_stage(stage: int, kg: KnowledgeGraph, space: SearchSpace, settings: SearchSettings,
               limit: float, budget_kind: str, records: list, checkpoint: Checkpoint | None,
               on_record=None, elapsed: float = 0.0) -> StageResult:
    """Propose, evaluate and record until the stage budget is spent."""
    model = settings.model
    forest = None
    pool = ProcessPoolExecutor(settings.workers) if settings.workers > 1 else None
    try:
        while True:
            done = len(records)
            if budget_kind == "trials" and done >= limit:
                break
            if budget_kind == "seconds" and elapsed >= limit:
                break
            if space.grid is not None and done >= len(space.grid):
                break
            width = settings.workers
            if budget_kind == "trials":
                width = min(width, int(limit) - done)
            if space.grid is not None:
                width = min(width, len(space.grid) - done)
            proposals, forest = _propose(stage, space, settings, records, width)
            seeds = [_trial_seed(settings.seed, stage, done + j) for j in range(len(proposals))]
            jobs = [(kg, model, cfg, settings, s) for cfg, s in zip(proposals, seeds)]
            results = list(pool.map(_evaluate_job, jobs)) if pool else [_evaluate_job(j) for j in jobs]
            for j, (cfg, s, res) in enumerate(zip(proposals, seeds, results)):
                rec = TrialRecord(
                    config=cfg, encoded=encode(cfg, space), metric=float(res.metric), seconds=res.seconds,
                    stage=stage, seed=s, diverged=res.diverged, trial=done + j, truncated=res.truncated,
                    epochs_run=res.epochs_run, best_epoch=res.best_epoch, steps=res.steps,
                    train_seconds=res.train_seconds,
                )
                records.append(rec)
                elapsed += res.seconds
                logger.info("stage %d trial %d metric %.4f (%.1fs)", stage, rec.trial, rec.metric, rec.seconds)
                if checkpoint is not None:
                    checkpoint.append(rec)
                if on_record is not None:
                    on_record(stage, records, elapsed, forest)
    finally:
        if pool is not None:
            pool.shutdown()
    return StageResult(records, forest, elapsed)


def _propose(stage, space, settings, records, width):
    """``width`` distinct proposals from one surrogate fit (or random draws)."""
    index = len(records)
    rng = _proposal_rng(settings.seed, stage, index)
    exclude = [r.config for r in records]
    if settings.algo == "random":
        out = []
        for _ in range(width):
            cfg = propose_next(space, None, rng, exclude=exclude) if space.grid is not None \
                else propose_random(space, rng)
            out.append(cfg)
            exclude.append(cfg)
        return out, None
    forest = None
    if len(records) >= settings.warm_start:
        X = np.stack([r.encoded for r in records])
        labels = bore_labels([r.metric for r in records], settings.tau, settings.tau_mode)
        forest = rf_fit(X, labels, _trial_seed(settings.seed, stage, index))
    out = []
    for _ in range(width):
        cfg = propose_next(space, forest, rng, settings.n_candidates, exclude)
        out.append(cfg)
        exclude.append(cfg)
    return out, forest


def stage1_subgraph(kg: KnowledgeGraph, settings: SearchSettings) -> Subgraph:
    return sample_subgraph(kg, settings.sampler, settings.ratio, settings.seed)


def run_stage1(kg: KnowledgeGraph, settings: SearchSettings, budget: float, budget_kind: str = "trials",
               checkpoint: Checkpoint | None = None, records: list | None = None, subgraph=None,
               on_record=None, elapsed: float = 0.0):
    """Search the decoupled space on a subgraph; returns (top configs, records, subgraph)."""
    subgraph = subgraph if subgraph is not None else stage1_subgraph(kg, settings)
    records = list(records or [])
    result = _run_stage(1, subgraph.to_kg(), decoupled_space(), settings, budget, budget_kind, records,
                        checkpoint, on_record, elapsed)
    if not result.records:
        raise StageFailure("stage one completed no trials")
    return _top_configs(result.records, settings.top_k), result, subgraph


def run_stage2(kg: KnowledgeGraph, settings: SearchSettings, top_configs: Sequence, budget: float,
               budget_kind: str = "trials", checkpoint: Checkpoint | None = None,
               records: list | None = None, on_record=None, elapsed: float = 0.0):
    """Evaluate the enlarged batch/dimension grid of the top configs on the full graph.

    Returns ``(best_config, best_metric, result, degraded)``. ``degraded`` is
    set when no stage-two trial produced a positive metric; the best config
    is then None and the caller falls back to stage one.
    """
    space = promote_stage2(top_configs, settings.model)
    records = list(records or [])
    result = _run_stage(2, kg, space, settings, budget, budget_kind, records, checkpoint, on_record, elapsed)
    best, y_star = None, 0.0
    for rec in result.records:
        if rec.metric > y_star:
            best, y_star = rec.config, rec.metric
    return best, y_star, result, best is None


def running_best(records: Sequence[TrialRecord]) -> list[float]:
    """y* after each record, starting from 0."""
    out, y = [], 0.0
    for r in records:
        y = max(y, r.metric)
        out.append(y)
    return out


def final_evaluation(kg: KnowledgeGraph, model: str, config: HpConfig, settings: SearchSettings) -> dict:
    """Retrain ``config`` on the full training split and report valid/test metrics."""
    train_kg = kg
    if settings.final_include_valid:
        train_kg = KnowledgeGraph(kg.num_entities, kg.num_relations, np.concatenate([kg.train, kg.valid]),
                                  kg.valid, kg.test, kg.entity_names, kg.relation_names)
    epochs = settings.final_epochs or settings.epochs
    tc = TrainConfig.from_hp(model, config, epochs=epochs, seed=_trial_seed(settings.seed, 3, 0))
    res = train_trial(train_kg, tc, settings.trial_budget, keep_state=True)
    out = {"retrain_valid_mrr": res.metric, "diverged": res.diverged, "epochs_run": res.epochs_run}
    if len(kg.test) and not res.diverged:
        out["test"] = evaluate(model, res.state, train_kg, "test").to_dict()
    else:
        out["test"] = None
    return out


def _state_dict(settings, budget, stage, subgraph, elapsed, top=None, done=False):
    return {
        "settings": settings.to_dict(),
        "budget": budget.to_dict(),
        "stage": stage,
        "subgraph": subgraph.descriptor() if subgraph is not None else None,
        "elapsed": elapsed,
        "top_configs": [c.to_dict() for c in top] if top else None,
        "done": done,
    }


def run(kg: KnowledgeGraph, settings: SearchSettings, budget: Budget, out_dir=None, resume: bool = False,
        final: bool = True) -> dict:
    """Full two-stage search; returns the final report (also written to ``out_dir``)."""
    checkpoint = Checkpoint(out_dir) if out_dir is not None else None
    stage1_records: list[TrialRecord] = []
    stage2_records: list[TrialRecord] = []
    elapsed = {1: 0.0, 2: 0.0}
    if checkpoint is not None and resume:
        stage1_records, stage2_records, elapsed = _restore(checkpoint, settings, budget)
    elif checkpoint is not None:
        for name in (Checkpoint.HISTORY, Checkpoint.TIMINGS, Checkpoint.STATE, Checkpoint.FOREST):
            (checkpoint.dir / name).unlink(missing_ok=True)

    b1, b2 = budget.split()
    subgraph = stage1_subgraph(kg, settings)
    top_holder: list = []

    def persist(stage, records, spent, forest):
        elapsed[stage] = spent
        if checkpoint is not None:
            checkpoint.save_forest(forest)
            checkpoint.save_state(_state_dict(settings, budget, stage, subgraph, elapsed,
                                              top_holder[0] if top_holder else None))

    top, r1, _ = run_stage1(kg, settings, b1, budget.kind, checkpoint, stage1_records, subgraph, persist,
                            elapsed[1])
    top_holder.append(top)
    best, y_star, r2, degraded = run_stage2(kg, settings, top, b2, budget.kind, checkpoint, stage2_records,
                                            persist, elapsed[2])
    if degraded:
        logger.warning("stage two produced no usable trial; falling back to the best stage-one config")
        best = top[0]
        y_star = max(r.metric for r in r1.records)
    report = {
        "algo": settings.algo,
        "model": settings.model,
        "seed": settings.seed,
        "best_config": best.to_dict(),
        "val_mrr": y_star,
        "degraded": degraded,
        "stage1_trials": len(r1.records),
        "stage2_trials": len(r2.records),
        "stage1_history": [r.to_dict(timing=False) for r in r1.records],
        "stage2_history": [r.to_dict(timing=False) for r in r2.records],
        "top_configs": [c.to_dict() for c in top],
        "subgraph": {k: v for k, v in subgraph.descriptor().items() if k in ("method", "ratio", "seed")},
        "budget": budget.to_dict(),
        "test_metrics": None,
    }
    if final:
        fin = final_evaluation(kg, settings.model, best, settings)
        report["test_metrics"] = fin["test"]
        report["final_valid_mrr"] = fin["retrain_valid_mrr"]
    if checkpoint is not None:
        checkpoint.save_state(_state_dict(settings, budget, 2, subgraph, elapsed, top, done=True))
        (checkpoint.dir / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def _restore(checkpoint: Checkpoint, settings: SearchSettings, budget: Budget):
    state = checkpoint.load_state()
    if state is None:
        return [], [], {1: 0.0, 2: 0.0}
    if state["settings"] != settings.to_dict() or state["budget"] != budget.to_dict():
        raise ValueError("resume settings differ from the checkpointed search")
    s1, s2 = [], []
    rows = checkpoint.load_records()
    space1 = decoupled_space()
    for row, timing in rows:
        if row["stage"] == 1:
            s1.append(TrialRecord.from_dict(row, space1, timing))
    stage2_rows = [(row, timing) for row, timing in rows if row["stage"] == 2]
    if stage2_rows:
        # stage two only starts once stage one is complete, so its grid is recomputable
        space2 = promote_stage2(_top_configs(s1, settings.top_k), settings.model)
        s2 = [TrialRecord.from_dict(row, space2, timing) for row, timing in stage2_rows]
    checkpoint.truncate(len(s1) + len(s2))
    elapsed = {int(k): float(v) for k, v in state.get("elapsed", {}).items()} or {1: 0.0, 2: 0.0}
    elapsed.setdefault(1, 0.0)
    elapsed.setdefault(2, 0.0)
    logger.info("resuming with %d stage-one and %d stage-two records", len(s1), len(s2))
    return s1, s2, elapsed
