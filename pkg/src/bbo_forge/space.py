"""Search spaces over numerical (linear/log), integer, and categorical parameters.

A space is an ordered list of parameter domains; a configuration is a tuple of
values aligned with that order. All scaling between native values and the unit
cube lives here so that samplers, surrogates, and the trajectory codec share a
single definition.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

CONTINUOUS = "continuous-uniform"
LOG_CONTINUOUS = "continuous-log-uniform"
INTEGER = "integer-uniform"
CATEGORICAL = "categorical"

NUMERICAL_KINDS = (CONTINUOUS, LOG_CONTINUOUS, INTEGER)
ALL_KINDS = NUMERICAL_KINDS + (CATEGORICAL,)

# A configuration is a plain tuple of values aligned with SearchSpace.parameters:
# floats for continuous kinds, ints for integer and categorical kinds.
Configuration = tuple


@dataclass(frozen=True)
class ParameterDomain:
    """One parameter's domain: bounds for numerical kinds, cardinality for categorical."""

    name: str
    kind: str
    lo: float = 0.0
    hi: float = 1.0
    cardinality: int = 0

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("parameter name must be non-empty")
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if self.cardinality < 1:
                raise ValueError(f"{self.name}: categorical cardinality must be >= 1")
        elif self.kind == INTEGER:
            if not float(self.lo).is_integer() or not float(self.hi).is_integer():
                raise ValueError(f"{self.name}: integer bounds must be integers")
            if self.lo > self.hi:
                raise ValueError(f"{self.name}: integer bounds need lo <= hi")
        else:
            if not self.lo < self.hi:
                raise ValueError(f"{self.name}: bounds need lo < hi")
            if self.kind == LOG_CONTINUOUS and self.lo <= 0:
                raise ValueError(f"{self.name}: log-uniform bounds must be positive")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


def uniform(name: str, lo: float, hi: float) -> ParameterDomain:
    return ParameterDomain(name, CONTINUOUS, float(lo), float(hi))


def log_uniform(name: str, lo: float, hi: float) -> ParameterDomain:
    return ParameterDomain(name, LOG_CONTINUOUS, float(lo), float(hi))


def integer(name: str, lo: int, hi: int) -> ParameterDomain:
    return ParameterDomain(name, INTEGER, float(lo), float(hi))


def categorical(name: str, cardinality: int) -> ParameterDomain:
    return ParameterDomain(name, CATEGORICAL, cardinality=int(cardinality))


@dataclass(frozen=True)
class SearchSpace:
    """An ordered, immutable collection of parameter domains."""

    id: str
    parameters: tuple[ParameterDomain, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.parameters, tuple):
            object.__setattr__(self, "parameters", tuple(self.parameters))
        if len(self.parameters) < 1:
            raise ValueError("search space needs at least one parameter")
        names = [p.name for p in self.parameters]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in space {self.id!r}")

    @property
    def dim(self) -> int:
        return len(self.parameters)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters)

    def index_of(self, name: str) -> int:
        for i, p in enumerate(self.parameters):
            if p.name == name:
                return i
        raise KeyError(f"no parameter named {name!r} in space {self.id!r}")

    def validate(self, config: Configuration) -> None:
        """Raise ValueError if config does not lie in this space."""
        if len(config) != self.dim:
            raise ValueError(
                f"configuration has {len(config)} values, space {self.id!r} has {self.dim}"
            )
        for p, v in zip(self.parameters, config):
            if p.is_categorical:
                if not float(v).is_integer() or not 0 <= int(v) < p.cardinality:
                    raise ValueError(f"{p.name}: index {v!r} outside [0, {p.cardinality - 1}]")
            else:
                if not p.lo <= v <= p.hi:
                    raise ValueError(f"{p.name}: value {v!r} outside [{p.lo}, {p.hi}]")
                if p.kind == INTEGER and not float(v).is_integer():
                    raise ValueError(f"{p.name}: value {v!r} is not an integer")

    def config_to_dict(self, config: Configuration) -> dict:
        return {p.name: v for p, v in zip(self.parameters, config)}

    def config_from_dict(self, values: dict) -> Configuration:
        try:
            raw = [values[p.name] for p in self.parameters]
        except KeyError as e:
            raise ValueError(f"missing value for parameter {e.args[0]!r}") from None
        config = tuple(
            int(v) if p.kind in (INTEGER, CATEGORICAL) else float(v)
            for p, v in zip(self.parameters, raw)
        )
        self.validate(config)
        return config


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> Configuration:
    """Draw each parameter independently from its uniform distribution."""
    values = []
    for p in space.parameters:
        if p.kind == CONTINUOUS:
            values.append(float(rng.uniform(p.lo, p.hi)))
        elif p.kind == LOG_CONTINUOUS:
            values.append(float(p.lo * (p.hi / p.lo) ** rng.random()))
        elif p.kind == INTEGER:
            values.append(int(rng.integers(int(p.lo), int(p.hi) + 1)))
        else:
            values.append(int(rng.integers(0, p.cardinality)))
    return tuple(values)


def to_unit(space: SearchSpace, config: Configuration) -> tuple:
    """Map a configuration to unit-cube coordinates; categorical indices pass through."""
    space.validate(config)
    out = []
    for p, v in zip(space.parameters, config):
        if p.is_categorical:
            out.append(int(v))
        elif p.kind == LOG_CONTINUOUS:
            out.append(math.log(v / p.lo) / math.log(p.hi / p.lo))
        elif p.hi > p.lo:
            out.append((v - p.lo) / (p.hi - p.lo))
        else:
            out.append(0.0)
    return tuple(out)


def from_unit(space: SearchSpace, u: Sequence) -> Configuration:
    """Inverse of to_unit; integer parameters round to the nearest in-range integer."""
    if len(u) != space.dim:
        raise ValueError(f"unit vector has {len(u)} entries, space has {space.dim}")
    out = []
    for p, x in zip(space.parameters, u):
        if p.is_categorical:
            idx = int(x)
            if not 0 <= idx < p.cardinality:
                raise ValueError(f"{p.name}: index {x!r} outside [0, {p.cardinality - 1}]")
            out.append(idx)
            continue
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"{p.name}: unit value {x!r} outside [0, 1]")
        if p.kind == LOG_CONTINUOUS:
            out.append(float(p.lo * (p.hi / p.lo) ** x))
        elif p.kind == INTEGER:
            # round half up, then clamp into {lo..hi}
            v = int(math.floor(p.lo + x * (p.hi - p.lo) + 0.5))
            out.append(min(max(v, int(p.lo)), int(p.hi)))
        else:
            out.append(float(p.lo + x * (p.hi - p.lo)))
    return tuple(out)


def canonical_order(space: SearchSpace) -> tuple[int, ...]:
    """Stable permutation placing numerical/integer parameters before categorical ones."""
    nums = [i for i, p in enumerate(space.parameters) if not p.is_categorical]
    cats = [i for i, p in enumerate(space.parameters) if p.is_categorical]
    return tuple(nums + cats)


def _fmt_float(v: float) -> str:
    # shortest round-trip decimal, so headers are stable golden files
    return repr(float(v))


def encode_space_header(space: SearchSpace) -> str:
    """Render the per-parameter header block, one line per parameter in canonical order."""
    lines = []
    for i in canonical_order(space):
        p = space.parameters[i]
        if p.kind == CATEGORICAL:
            cats = ", ".join(str(j) for j in range(p.cardinality))
            lines.append(f"<type>:<CATEGORICAL>,<categories>:[{cats}]")
        elif p.kind == INTEGER:
            lines.append(
                f"<type>:<INT>,<min_value>:{int(p.lo)},<max_value>:{int(p.hi)},<linear-scale>"
            )
        else:
            scale = "<log-scale>" if p.kind == LOG_CONTINUOUS else "<linear-scale>"
            lines.append(
                f"<type>:<UNI>,<min_value>:{_fmt_float(p.lo)},"
                f"<max_value>:{_fmt_float(p.hi)},{scale}"
            )
    return "&\n".join(lines)


def space_to_json(space: SearchSpace) -> dict:
    params = []
    for p in space.parameters:
        d: dict = {"name": p.name, "kind": p.kind}
        if p.is_categorical:
            d["cardinality"] = p.cardinality
        elif p.kind == INTEGER:
            d["lo"] = int(p.lo)
            d["hi"] = int(p.hi)
        else:
            d["lo"] = p.lo
            d["hi"] = p.hi
        params.append(d)
    return {"id": space.id, "parameters": params}


def space_from_json(doc: dict) -> SearchSpace:
    params = []
    for d in doc["parameters"]:
        kind = d["kind"]
        if kind == CATEGORICAL:
            params.append(ParameterDomain(d["name"], kind, cardinality=int(d["cardinality"])))
        else:
            params.append(ParameterDomain(d["name"], kind, float(d["lo"]), float(d["hi"])))
    return SearchSpace(doc["id"], tuple(params))


def dumps_space(space: SearchSpace) -> str:
    return json.dumps(space_to_json(space), sort_keys=True)


def loads_space(text: str) -> SearchSpace:
    return space_from_json(json.loads(text))
