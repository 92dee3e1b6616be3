"""Random-forest surrogate with density-ratio (BORE) acquisition."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .space import HpConfig, SearchSpace, encode, encode_many, sample_config

logger = logging.getLogger(__name__)

N_TREES = 200
N_CANDIDATES = 512
WARM_START = 10
DEFAULT_TAU = 0.8


@dataclass
class TrialRecord:
    config: HpConfig
    encoded: np.ndarray
    metric: float
    seconds: float
    stage: int
    seed: int
    diverged: bool = False
    trial: int = 0
    truncated: bool = False
    epochs_run: int = 0
    best_epoch: int = 0
    steps: int = 0
    train_seconds: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.metric <= 1.0:
            raise ValueError(f"metric must lie in [0, 1], got {self.metric}")
        self.config = HpConfig(self.config)
        self.encoded = np.asarray(self.encoded, dtype=float)

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "trial": self.trial,
            "stage": self.stage,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "metric": self.metric,
            "diverged": self.diverged,
            "truncated": self.truncated,
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "steps": self.steps,
        }
        if timing:
            out["seconds"] = self.seconds
            out["train_seconds"] = self.train_seconds
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing))

    @classmethod
    def from_dict(cls, d: Mapping, space: SearchSpace, timing: Mapping | None = None) -> "TrialRecord":
        timing = dict(timing or d)
        config = HpConfig(d["config"])
        return cls(
            config=config,
            encoded=encode(config, space),
            metric=float(d["metric"]),
            seconds=float(timing.get("seconds", 0.0)),
            train_seconds=float(timing.get("train_seconds", 0.0)),
            stage=int(d["stage"]),
            seed=int(d["seed"]),
            diverged=bool(d.get("diverged", False)),
            trial=int(d.get("trial", 0)),
            truncated=bool(d.get("truncated", False)),
            epochs_run=int(d.get("epochs_run", 0)),
            best_epoch=int(d.get("best_epoch", 0)),
            steps=int(d.get("steps", 0)),
        )


def bore_labels(metrics, tau: float = DEFAULT_TAU, mode: str = "quantile") -> np.ndarray:
    """Binary labels: 1 for the good region, 0 otherwise.

    ``quantile`` mode labels metrics at or above the ``tau``-quantile; when
    that marks every record but the metrics are not all equal, the cut
    becomes strict so both labels are present. ``absolute`` mode compares
    metrics with ``tau`` directly.
    """
    y = np.asarray(metrics, dtype=float)
    if y.size == 0:
        raise ValueError("bore_labels needs at least one record")
    if mode == "absolute":
        return (y >= tau).astype(int)
    if mode != "quantile":
        raise ValueError(f"unknown mode {mode!r}")
    cut = np.quantile(y, tau)
    labels = y >= cut
    if labels.all() and np.unique(y).size > 1:
        labels = y > cut
    return labels.astype(int)


@dataclass
class Forest:
    """Tree ensemble stored as flat node arrays; prediction is the mean leaf vote.

    ``trees`` holds per-tree dicts of equal-length arrays: ``left``,
    ``right`` (-1 at leaves), ``feature``, ``threshold`` and ``positive``
    (fraction of class-1 training weight in the node).
    """
    trees: list = field(default_factory=list)
    n_features: int = 0
    seed: int = 0

    def predict(self, X) -> np.ndarray:
        """Probability of label 1 for each row of ``X``."""
        # splits were learned on float32 copies of the features
        X = np.asarray(X, dtype=np.float32).reshape(-1, self.n_features)
        total = np.zeros(len(X))
        rows = np.arange(len(X))
        for t in self.trees:
            node = np.zeros(len(X), dtype=np.int64)
            while True:
                inner = t["left"][node] >= 0
                if not inner.any():
                    break
                go_left = X[rows, np.maximum(t["feature"][node], 0)] <= t["threshold"][node]
                nxt = np.where(go_left, t["left"][node], t["right"][node])
                node = np.where(inner, nxt, node)
            total += t["positive"][node]
        return total / max(len(self.trees), 1)

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "seed": self.seed,
            "trees": [{k: v.tolist() for k, v in t.items()} for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Forest":
        dtypes = {"left": np.int64, "right": np.int64, "feature": np.int64,
                  "threshold": np.float64, "positive": np.float64}
        trees = [{k: np.asarray(t[k], dtype=dt) for k, dt in dtypes.items()} for t in d["trees"]]
        return cls(trees, int(d["n_features"]), int(d.get("seed", 0)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Forest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _flatten_tree(estimator, classes) -> dict:
    tree = estimator.tree_
    value = tree.value[:, 0, :]
    frac = value / np.maximum(value.sum(axis=1, keepdims=True), 1e-300)
    classes = list(classes)
    positive = frac[:, classes.index(1)] if 1 in classes else np.zeros(tree.node_count)
    return {
        "left": tree.children_left.astype(np.int64),
        "right": tree.children_right.astype(np.int64),
        "feature": tree.feature.astype(np.int64),
        "threshold": tree.threshold.astype(np.float64),
        "positive": positive.astype(np.float64),
    }


def rf_fit(X, labels, seed: int = 0, n_trees: int = N_TREES) -> Forest:
    """Fit a Gini random forest (bootstrap, sqrt feature subsampling, full depth)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(labels, dtype=int)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise ValueError("rf_fit needs a nonempty 2-D X with one label per row")
    clf = RandomForestClassifier(
        n_estimators=n_trees, criterion="gini", max_features="sqrt", bootstrap=True,
        max_depth=None, min_samples_leaf=1, random_state=seed, n_jobs=1,
    )
    clf.fit(X, y)
    trees = [_flatten_tree(est, clf.classes_) for est in clf.estimators_]
    return Forest(trees, X.shape[1], seed)


def propose_random(space: SearchSpace, rng) -> HpConfig:
    return sample_config(space, rng)


def propose_next(space: SearchSpace, forest: Forest | None, rng, n_candidates: int = N_CANDIDATES,
                 exclude: Sequence[Mapping] = ()) -> HpConfig:
    """Candidate with the highest predicted probability of label 1.

    Without a forest this is a plain random draw. Grid spaces score every
    not-yet-evaluated grid point instead of sampling; ``exclude`` lists the
    evaluated points. Ties go to the earliest candidate.
    """
    if space.grid is not None:
        done = set(HpConfig(c) for c in exclude)
        candidates = [c for c in space.grid if c not in done]
        if not candidates:
            raise ValueError("every grid point has been evaluated")
        if forest is None:
            return candidates[int(rng.integers(len(candidates)))]
    else:
        if forest is None:
            return sample_config(space, rng)
        candidates = [sample_config(space, rng) for _ in range(n_candidates)]
    scores = forest.predict(encode_many(candidates, space))
    best = candidates[int(np.argmax(scores))]
    return best


def surrogate_step(space: SearchSpace, records: Sequence[TrialRecord], rng, seed: int,
                   tau: float = DEFAULT_TAU, mode: str = "quantile", exclude=(),
                   warm_start: int = WARM_START, n_candidates: int = N_CANDIDATES):
    """One RF+BORE proposal from the history; returns (config, forest or None)."""
    forest = None
    if len(records) >= warm_start:
        X = np.stack([r.encoded for r in records])
        labels = bore_labels([r.metric for r in records], tau, mode)
        forest = rf_fit(X, labels, seed)
    return propose_next(space, forest, rng, n_candidates, exclude), forest


# --- planted-optimum benchmark -------------------------------------------------

@dataclass(frozen=True)
class PlantedObjective:
    """Smooth synthetic objective with one hidden optimum in a search space.

    Each categorical HP contributes a mismatch penalty and each numeric HP a
    squared distance in its [0, 1] encoding; the score is ``exp(-penalty)``.
    """
    space: SearchSpace
    target: HpConfig
    weights: tuple

    @classmethod
    def plant(cls, space: SearchSpace, seed: int) -> "PlantedObjective":
        rng = np.random.default_rng(seed)
        target = sample_config(space, rng)
        weights = tuple(float(w) for w in rng.uniform(0.5, 1.5, size=len(space.descriptors)))
        return cls(space, target, weights)

    def __call__(self, config: Mapping) -> float:
        penalty = 0.0
        for d, w in zip(self.space.descriptors, self.weights):
            a, b = config.get(d.name), self.target.get(d.name)
            if d.is_float:
                if a is None and b is None:
                    continue
                if a is None or b is None:
                    penalty += w
                else:
                    penalty += 4.0 * w * (d._to_unit(a) - d._to_unit(b)) ** 2
            elif a != b:
                penalty += w
        return float(np.exp(-penalty))

    def top_threshold(self, fraction: float = 0.01, n: int = 20000, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        values = [self(sample_config(self.space, rng)) for _ in range(n)]
        return float(np.quantile(values, 1.0 - fraction))


def trials_to_target(objective: Callable[[Mapping], float], space: SearchSpace, threshold: float,
                     algo: str, seed: int, max_trials: int = 300) -> int:
    """Trials needed until a proposal scores >= threshold (max_trials + 1 if never)."""
    rng = np.random.default_rng(seed)
    records: list[TrialRecord] = []
    for i in range(max_trials):
        if algo == "random":
            config = propose_random(space, rng)
        elif algo == "rf_bore":
            config, _ = surrogate_step(space, records, rng, seed=seed * 100003 + i)
        else:
            raise ValueError(f"unknown algo {algo!r}")
        y = objective(config)
        if y >= threshold:
            return i + 1
        records.append(TrialRecord(config, encode(config, space), y, 0.0, 1, seed, trial=i))
    return max_trials + 1
