"""Parameter initialization and embedding dropout."""
from __future__ import annotations

import numpy as np

from ..models import EmbeddingState, ModelKind, relation_width

INITIALIZERS = ("uniform", "normal", "xavier_uniform", "xavier_normal")

UNIFORM_BOUND = 0.1
NORMAL_STD = 0.1


def xavier_uniform_bound(dim: int) -> float:
    return float(np.sqrt(6.0 / (dim + dim)))


def xavier_normal_std(dim: int) -> float:
    return float(np.sqrt(2.0 / (dim + dim)))


def _draw(initializer: str, shape, dim: int, rng) -> np.ndarray:
    if initializer == "uniform":
        return rng.uniform(-UNIFORM_BOUND, UNIFORM_BOUND, size=shape)
    if initializer == "normal":
        return rng.normal(0.0, NORMAL_STD, size=shape)
    if initializer == "xavier_uniform":
        b = xavier_uniform_bound(dim)
        return rng.uniform(-b, b, size=shape)
    if initializer == "xavier_normal":
        return rng.normal(0.0, xavier_normal_std(dim), size=shape)
    raise ValueError(f"unknown initializer {initializer!r}")


def init_embeddings(kind, num_entities: int, num_relations: int, dim: int, initializer: str,
                    rng) -> EmbeddingState:
    """Fresh parameters for ``kind``; RotatE phases are drawn from U(-pi, pi)."""
    kind = ModelKind.parse(kind)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    width = relation_width(kind, dim)
    entity = _draw(initializer, (num_entities, dim), dim, rng)
    if kind is ModelKind.ROTATE:
        relation = rng.uniform(-np.pi, np.pi, size=(num_relations, width))
    else:
        relation = _draw(initializer, (num_relations, width), dim, rng)
    return EmbeddingState(kind, dim, entity, relation)


def dropout_mask(shape, rate: float, rng) -> np.ndarray | None:
    """Inverted-dropout multiplier (0 or 1/(1-rate)); None when rate is 0."""
    if not 0.0 <= rate <= 0.5:
        raise ValueError(f"dropout rate must be in [0, 0.5], got {rate}")
    if rate == 0.0:
        return None
    keep = rng.random(shape, dtype=np.float32) >= np.float32(rate)
    return keep / (1.0 - rate)


def apply_dropout(rows: np.ndarray, rate: float, rng, training: bool = True) -> np.ndarray:
    """Zero each coordinate with probability ``rate`` and rescale survivors."""
    if not training:
        return rows
    mask = dropout_mask(rows.shape, rate, rng)
    return rows if mask is None else rows * mask
