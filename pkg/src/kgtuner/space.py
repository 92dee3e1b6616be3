"""Hyperparameter search spaces: descriptors, sampling, validation, encoding."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigValidationError
from .models import ModelKind

CATEGORICAL = "categorical"
FLOAT = "float"
INT_SET = "int_set"
BOOL = "bool"

HP_NAMES = (
    "negative_samples", "loss_function", "gamma", "adv_weight", "regularizer", "reg_weight",
    "dropout_rate", "optimizer", "learning_rate", "initializer", "batch_size", "dimension_size",
    "inverse_relation",
)


@dataclass(frozen=True)
class Condition:
    """Active when ``config[parent]`` is in ``values`` (or not in them if ``negate``)."""
    parent: str
    values: tuple
    negate: bool = False

    def holds(self, config: Mapping) -> bool:
        if self.parent not in config:
            return False
        inside = config[self.parent] in self.values
        return inside != self.negate

    def describe(self) -> str:
        op = "not in" if self.negate else "in"
        return f"{self.parent} {op} {list(self.values)}"


@dataclass(frozen=True)
class HpDescriptor:
    name: str
    kind: str
    options: tuple = ()
    lo: float | None = None
    hi: float | None = None
    scale: str = "linear"
    condition: Condition | None = None

    def __post_init__(self):
        if self.kind == FLOAT:
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise ValueError(f"{self.name}: need lo < hi")
            if self.scale not in ("linear", "log"):
                raise ValueError(f"{self.name}: unknown scale {self.scale!r}")
            if self.scale == "log" and self.lo <= 0:
                raise ValueError(f"{self.name}: log scale needs lo > 0")
        elif self.kind in (CATEGORICAL, INT_SET, BOOL):
            if not self.options:
                raise ValueError(f"{self.name}: options must be nonempty")
        else:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def is_float(self) -> bool:
        return self.kind == FLOAT

    def _to_unit(self, value: float) -> float:
        if self.scale == "log":
            return (math.log10(value) - math.log10(self.lo)) / (math.log10(self.hi) - math.log10(self.lo))
        return (value - self.lo) / (self.hi - self.lo)

    def _from_unit(self, u: float) -> float:
        u = min(max(float(u), 0.0), 1.0)
        if self.scale == "log":
            a, b = math.log10(self.lo), math.log10(self.hi)
            v = 10.0 ** (a + u * (b - a))
        else:
            v = self.lo + u * (self.hi - self.lo)
        return min(max(v, self.lo), self.hi)

    def sample(self, rng):
        if self.is_float:
            return self._from_unit(rng.random())
        return self.options[int(rng.integers(len(self.options)))]

    def contains(self, value) -> bool:
        if self.is_float:
            return isinstance(value, (int, float)) and not isinstance(value, bool) \
                and self.lo <= value <= self.hi
        if self.kind == BOOL:
            return isinstance(value, (bool, np.bool_)) and bool(value) in self.options
        return any(_same(value, o) for o in self.options)

    def width(self) -> int:
        base = 1 if self.kind in (FLOAT, BOOL) else len(self.options)
        return base + (1 if self.condition is not None else 0)

    def size(self) -> float:
        """Discrete size: option count, log-decades, or linear width."""
        if not self.is_float:
            return float(len(self.options))
        if self.scale == "log":
            return math.log10(self.hi) - math.log10(self.lo)
        return self.hi - self.lo


def _same(a, b) -> bool:
    """Option equality that keeps True apart from 1 and "32" apart from 32."""
    if isinstance(a, (bool, np.bool_)) or isinstance(b, bool):
        return isinstance(a, (bool, np.bool_)) and isinstance(b, bool) and bool(a) == b
    if isinstance(b, int):
        return isinstance(a, (int, np.integer)) and int(a) == b
    return a == b


class HpConfig(Mapping):
    """Immutable point in a search space; JSON-serializable flat mapping."""

    __slots__ = ("_items",)

    def __init__(self, values: Mapping | None = None, **kw):
        items = dict(values or {})
        items.update(kw)
        order = {n: i for i, n in enumerate(HP_NAMES)}
        keys = sorted(items, key=lambda k: (order.get(k, len(order)), k))
        object.__setattr__(self, "_items", tuple((k, _plain(items[k])) for k in keys))

    def __getitem__(self, key):
        for k, v in self._items:
            if k == key:
                return v
        raise KeyError(key)

    def __iter__(self) -> Iterator[str]:
        return (k for k, _ in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __hash__(self):
        return hash(self._items)

    def __eq__(self, other):
        if isinstance(other, HpConfig):
            return self._items == other._items
        if isinstance(other, Mapping):
            return dict(self._items) == dict(other)
        return NotImplemented

    def __setattr__(self, name, value):
        raise AttributeError("HpConfig is immutable")

    def __repr__(self):
        return f"HpConfig({dict(self._items)!r})"

    def replace(self, **changes) -> "HpConfig":
        d = dict(self._items)
        d.update(changes)
        return HpConfig(d)

    def without(self, *names) -> "HpConfig":
        return HpConfig({k: v for k, v in self._items if k not in names})

    def to_dict(self) -> dict:
        return dict(self._items)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "HpConfig":
        return cls(json.loads(text))


def _plain(v):
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


@dataclass(frozen=True)
class Violation:
    name: str
    message: str

    def to_dict(self) -> dict:
        return {"name": self.name, "message": self.message}


@dataclass(frozen=True)
class SearchSpace:
    descriptors: tuple
    variant: str = "full"
    grid: tuple | None = None
    model: str | None = None

    def __post_init__(self):
        seen = set()
        for d in self.descriptors:
            if d.condition is not None and d.condition.parent not in seen:
                raise ValueError(f"{d.name}: condition parent must precede it")
            seen.add(d.name)

    def __getitem__(self, name: str) -> HpDescriptor:
        for d in self.descriptors:
            if d.name == name:
                return d
        raise KeyError(name)

    @property
    def names(self) -> tuple:
        return tuple(d.name for d in self.descriptors)

    @property
    def encoded_width(self) -> int:
        return sum(d.width() for d in self.descriptors)


NEG_OPTIONS = (32, 128, 512, 2048, "1VsAll", "kVsAll")
LOSS_OPTIONS = ("MR", "BCE_mean", "BCE_sum", "BCE_adv", "CE")
REG_OPTIONS = ("FRO", "NUC", "DURA", "None")
OPT_OPTIONS = ("Adam", "Adagrad", "SGD")
INIT_OPTIONS = ("uniform", "normal", "xavier_uniform", "xavier_normal")
BATCH_OPTIONS = (128, 256, 512, 1024)
DIM_OPTIONS = (100, 200, 500, 1000, 2000)


def full_space() -> SearchSpace:
    return SearchSpace((
        HpDescriptor("negative_samples", CATEGORICAL, NEG_OPTIONS),
        HpDescriptor("loss_function", CATEGORICAL, LOSS_OPTIONS),
        HpDescriptor("gamma", FLOAT, lo=1.0, hi=24.0, condition=Condition("loss_function", ("MR",))),
        HpDescriptor("adv_weight", FLOAT, lo=0.5, hi=2.0, condition=Condition("loss_function", ("BCE_adv",))),
        HpDescriptor("regularizer", CATEGORICAL, REG_OPTIONS),
        HpDescriptor("reg_weight", FLOAT, lo=1e-12, hi=1e2, scale="log",
                     condition=Condition("regularizer", ("None",), negate=True)),
        HpDescriptor("dropout_rate", FLOAT, lo=0.0, hi=0.5),
        HpDescriptor("optimizer", CATEGORICAL, OPT_OPTIONS),
        HpDescriptor("learning_rate", FLOAT, lo=1e-5, hi=1.0, scale="log"),
        HpDescriptor("initializer", CATEGORICAL, INIT_OPTIONS),
        HpDescriptor("batch_size", INT_SET, BATCH_OPTIONS),
        HpDescriptor("dimension_size", INT_SET, DIM_OPTIONS),
        HpDescriptor("inverse_relation", BOOL, (True, False)),
    ), "full")


def _revise(space: SearchSpace, variant: str, **changes) -> SearchSpace:
    descs = tuple(replace(d, **changes[d.name]) if d.name in changes else d for d in space.descriptors)
    return SearchSpace(descs, variant, space.grid, space.model)


def shrunken_space() -> SearchSpace:
    return _revise(
        full_space(), "shrunken",
        optimizer=dict(options=("Adam",)),
        learning_rate=dict(lo=1e-4, hi=1e-1),
        reg_weight=dict(lo=1e-8, hi=1e-2),
        dropout_rate=dict(lo=0.0, hi=0.3),
        inverse_relation=dict(options=(False,)),
    )


def decoupled_space() -> SearchSpace:
    return _revise(
        shrunken_space(), "decoupled",
        batch_size=dict(options=(128,)),
        dimension_size=dict(options=(100,)),
    )


def space_by_name(name: str) -> SearchSpace:
    builders = {"full": full_space, "shrunken": shrunken_space, "decoupled": decoupled_space}
    if name not in builders:
        raise ValueError(f"unknown space {name!r}; choose from {sorted(builders)}")
    return builders[name]()


def size_ratio(big: SearchSpace, small: SearchSpace) -> float:
    """Ratio of discrete sizes, counting floats by log-decades or linear width."""
    ratio = 1.0
    for d in big.descriptors:
        ratio *= d.size() / small[d.name].size()
    return ratio


STAGE2_BATCH = (512, 1024)
STAGE2_DIM = (1000, 2000)
STAGE2_DIM_RESCAL = (500, 1000)


def promote_stage2(top_configs: Sequence[Mapping], model) -> SearchSpace:
    """Grid of each top config crossed with enlarged batch and dimension sizes."""
    if not top_configs:
        raise ValueError("promote_stage2 needs at least one configuration")
    kind = ModelKind.parse(model)
    dims = STAGE2_DIM_RESCAL if kind is ModelKind.RESCAL else STAGE2_DIM
    grid, seen = [], set()
    for cfg in top_configs:
        for b in STAGE2_BATCH:
            for dim in dims:
                point = HpConfig(cfg).replace(batch_size=b, dimension_size=dim)
                if point not in seen:
                    seen.add(point)
                    grid.append(point)
    base = _revise(shrunken_space(), "stage2", batch_size=dict(options=STAGE2_BATCH),
                   dimension_size=dict(options=dims))
    return SearchSpace(base.descriptors, "stage2", tuple(grid), kind.value)


def sample_config(space: SearchSpace, rng) -> HpConfig:
    """Random point: conditional HPs are drawn only when their condition holds."""
    if space.grid is not None:
        return space.grid[int(rng.integers(len(space.grid)))]
    values: dict[str, Any] = {}
    for d in space.descriptors:
        if d.condition is None or d.condition.holds(values):
            values[d.name] = d.sample(rng)
    return HpConfig(values)


def latent_config(space: SearchSpace, unit: Sequence[float]) -> dict:
    """Map one unit-cube coordinate per descriptor to a value, ignoring conditions."""
    if len(unit) != len(space.descriptors):
        raise ValueError("need one coordinate per descriptor")
    out = {}
    for d, u in zip(space.descriptors, unit):
        if d.is_float:
            out[d.name] = d._from_unit(u)
        else:
            k = len(d.options)
            out[d.name] = d.options[min(int(float(u) * k), k - 1)]
    return out


def materialize(space: SearchSpace, latent: Mapping) -> HpConfig:
    """Drop conditional HPs whose condition does not hold."""
    values: dict[str, Any] = {}
    for d in space.descriptors:
        if d.name in latent and (d.condition is None or d.condition.holds(values)):
            values[d.name] = latent[d.name]
    return HpConfig(values)


def validate(config: Mapping, space: SearchSpace) -> list[Violation]:
    """Every violated range, membership or condition rule (empty when valid)."""
    out: list[Violation] = []
    known = set(space.names)
    for name in config:
        if name not in known:
            out.append(Violation(name, "unknown hyperparameter"))
    for d in space.descriptors:
        active = d.condition is None or d.condition.holds(config)
        present = d.name in config
        if active and not present:
            out.append(Violation(d.name, "missing"))
        elif present and not active:
            out.append(Violation(d.name, f"present but condition {d.condition.describe()} does not hold"))
        elif present and not d.contains(config[d.name]):
            if d.is_float:
                msg = f"{config[d.name]!r} outside [{d.lo!r}, {d.hi!r}]"
            else:
                msg = f"{config[d.name]!r} not in {list(d.options)}"
            out.append(Violation(d.name, msg))
    if space.grid is not None and not out and HpConfig(config) not in space.grid:
        out.append(Violation("*", "not a point of the stage-two grid"))
    return out


def check(config: Mapping, space: SearchSpace) -> HpConfig:
    """Return ``config`` as HpConfig or raise ConfigValidationError."""
    bad = validate(config, space)
    if bad:
        raise ConfigValidationError([v.to_dict() for v in bad])
    return HpConfig(config)


def encode(config: Mapping, space: SearchSpace) -> np.ndarray:
    """Fixed-length vector: one-hot categories, [0,1] floats, presence bits."""
    check(config, space)
    out = np.zeros(space.encoded_width)
    i = 0
    for d in space.descriptors:
        present = d.name in config
        if d.is_float:
            if present:
                out[i] = d._to_unit(config[d.name])
            i += 1
        elif d.kind == BOOL:
            if present:
                out[i] = float(bool(config[d.name]))
            i += 1
        else:
            if present:
                j = next(k for k, o in enumerate(d.options) if _same(config[d.name], o))
                out[i + j] = 1.0
            i += len(d.options)
        if d.condition is not None:
            out[i] = float(present)
            i += 1
    return out


def encode_many(configs: Sequence[Mapping], space: SearchSpace) -> np.ndarray:
    if not configs:
        return np.zeros((0, space.encoded_width))
    return np.stack([encode(c, space) for c in configs])


def decode(vector, space: SearchSpace) -> HpConfig:
    """Inverse of ``encode``; conditional presence follows the decoded parents."""
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (space.encoded_width,):
        raise ValueError(f"expected length {space.encoded_width}, got {vector.shape}")
    values: dict[str, Any] = {}
    i = 0
    for d in space.descriptors:
        active = d.condition is None or d.condition.holds(values)
        if d.is_float:
            v = d._from_unit(vector[i])
            i += 1
        elif d.kind == BOOL:
            v = bool(vector[i] >= 0.5)
            if v not in d.options:
                v = d.options[0]
            i += 1
        else:
            k = len(d.options)
            v = d.options[int(np.argmax(vector[i:i + k]))]
            i += k
        if d.condition is not None:
            i += 1
        if active:
            values[d.name] = v
    return HpConfig(values)


def discretized_values(name: str, space: SearchSpace | None = None) -> tuple:
    """Values swept in control-variate analysis; floats follow a fixed grid."""
    space = space or full_space()
    d = space[name]
    if not d.is_float:
        return tuple(d.options)
    grids = {
        "gamma": (1.0, 6.0, 12.0, 24.0),
        "adv_weight": (0.5, 1.0, 2.0),
        "reg_weight": tuple(10.0 ** e for e in range(-12, 3, 2)),
        "dropout_rate": tuple(round(0.1 * k, 10) for k in range(6)),
        "learning_rate": tuple(10.0 ** e for e in range(-5, 1)),
    }
    if name not in grids:
        raise KeyError(f"no discretization for {name!r}")
    return tuple(v for v in grids[name] if d.lo <= v <= d.hi)


def load_config_file(path) -> tuple[HpConfig, dict]:
    """Read a JSON or key=value file; returns the HpConfig and the non-HP fields."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        raw = json.loads(text)
    else:
        raw = parse_key_values(text.splitlines())
    hp = {k: v for k, v in raw.items() if k in HP_NAMES}
    meta = {k: v for k, v in raw.items() if k not in HP_NAMES}
    return HpConfig(hp), meta


def parse_key_values(lines) -> dict:
    out = {}
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {line!r}")
        out[key.strip()] = parse_scalar(value.strip())
    return out


def parse_scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text
