"""Two-stage hyperparameter search for knowledge-graph embedding models."""
from __future__ import annotations

from .data import KnowledgeGraph, load_kg, load_kg_dir
from .evaluation import RankResult, evaluate
from .models import EmbeddingState, ModelKind
from .space import HpConfig, SearchSpace, decoupled_space, full_space, shrunken_space
from .training import TrainConfig, TrialBudget, train_trial
from .tuner import Budget, SearchSettings, run

__version__ = "0.1.0"

__all__ = [
    "Budget", "EmbeddingState", "HpConfig", "KnowledgeGraph", "ModelKind", "RankResult", "SearchSettings",
    "SearchSpace", "TrainConfig", "TrialBudget", "decoupled_space", "evaluate", "full_space", "load_kg",
    "load_kg_dir", "run", "shrunken_space", "train_trial",
]
