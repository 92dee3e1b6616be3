"""Negative sampling, losses, regularizers, optimizers and the trial loop."""
from __future__ import annotations

from .loop import TrainConfig, TrialBudget, TrialResult, batch_objective, train_trial
from .losses import LossSpec, loss_and_grad
from .negatives import NegSampling, sample_negatives, sample_negatives_batch
from .optimizers import optimizer_step
from .regularizers import RegSpec, regularize

__all__ = [
    "LossSpec", "NegSampling", "RegSpec", "TrainConfig", "TrialBudget", "TrialResult",
    "batch_objective", "loss_and_grad", "optimizer_step", "regularize", "sample_negatives",
    "sample_negatives_batch", "train_trial",
]
