"""Objective functions: analytic test functions, kNN surrogates over offline
evaluation tables, and masked-parameter task construction.

Everything here is a minimization problem; maximization data must be negated
at ingestion time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import space as sp

Oracle = Callable[[sp.Configuration], float]


@dataclass(frozen=True)
class BenchmarkTask:
    """A deterministic objective over a search space."""

    id: str
    space: sp.SearchSpace
    oracle: Oracle
    family: str = "custom"

    def evaluate(self, config: sp.Configuration) -> float:
        self.space.validate(config)
        return float(self.oracle(config))


# ---------------------------------------------------------------------------
# Analytic global-optimization functions
# ---------------------------------------------------------------------------


def _forrester(x: float) -> float:
    return (6.0 * x - 2.0) ** 2 * math.sin(12.0 * x - 4.0)


def _branin(x1: float, x2: float) -> float:
    a = 1.0
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    r = 6.0
    s = 10.0
    t = 1.0 / (8.0 * math.pi)
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1.0 - t) * math.cos(x1) + s


def _eggholder(x1: float, x2: float) -> float:
    term1 = -(x2 + 47.0) * math.sin(math.sqrt(abs(x1 / 2.0 + x2 + 47.0)))
    term2 = -x1 * math.sin(math.sqrt(abs(x1 - (x2 + 47.0))))
    return term1 + term2


def _goldstein_price(x1: float, x2: float) -> float:
    part1 = 1.0 + (x1 + x2 + 1.0) ** 2 * (
        19.0 - 14.0 * x1 + 3.0 * x1**2 - 14.0 * x2 + 6.0 * x1 * x2 + 3.0 * x2**2
    )
    part2 = 30.0 + (2.0 * x1 - 3.0 * x2) ** 2 * (
        18.0 - 32.0 * x1 + 12.0 * x1**2 + 48.0 * x2 - 36.0 * x1 * x2 + 27.0 * x2**2
    )
    return part1 * part2


@dataclass(frozen=True)
class SyntheticFunction:
    name: str
    fn: Callable[..., float]
    space: sp.SearchSpace


_REGISTRY: dict[str, SyntheticFunction] = {}


def register_synthetic(name: str, fn: Callable[..., float], space: sp.SearchSpace) -> None:
    """Extension point: add a named analytic function with its standard domain."""
    if name in _REGISTRY:
        raise ValueError(f"synthetic function {name!r} already registered")
    _REGISTRY[name] = SyntheticFunction(name, fn, space)


def synthetic_names() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


register_synthetic(
    "forrester", _forrester, sp.SearchSpace("forrester", (sp.uniform("x", 0.0, 1.0),))
)
register_synthetic(
    "branin",
    _branin,
    sp.SearchSpace("branin", (sp.uniform("x1", -5.0, 10.0), sp.uniform("x2", 0.0, 15.0))),
)
register_synthetic(
    "eggholder",
    _eggholder,
    sp.SearchSpace("eggholder", (sp.uniform("x1", -512.0, 512.0), sp.uniform("x2", -512.0, 512.0))),
)
register_synthetic(
    "goldstein_price",
    _goldstein_price,
    sp.SearchSpace("goldstein_price", (sp.uniform("x1", -2.0, 2.0), sp.uniform("x2", -2.0, 2.0))),
)


def evaluate_synthetic(name: str, config: sp.Configuration) -> float:
    if name not in _REGISTRY:
        raise KeyError(f"unknown synthetic function {name!r}; known: {synthetic_names()}")
    entry = _REGISTRY[name]
    if len(config) != entry.space.dim:
        raise ValueError(
            f"{name} expects {entry.space.dim} values, got {len(config)}"
        )
    return float(entry.fn(*config))


def synthetic_task(name: str) -> BenchmarkTask:
    entry = _REGISTRY[name]
    return BenchmarkTask(
        id=f"global-optimization/{name}",
        space=entry.space,
        oracle=lambda config, _fn=entry.fn: float(_fn(*config)),
        family="global-optimization",
    )


# ---------------------------------------------------------------------------
# Offline tables and kNN surrogates
# ---------------------------------------------------------------------------


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class OfflineTable:
    """Rows of (configuration, objective) pairs over one space."""

    space: sp.SearchSpace
    rows: tuple[tuple[sp.Configuration, float], ...]

    def __post_init__(self) -> None:
        if not isinstance(self.rows, tuple):
            object.__setattr__(self, "rows", tuple(self.rows))
        if len(self.rows) == 0:
            raise TableError("offline table needs at least one row")
        for i, (config, y) in enumerate(self.rows):
            try:
                self.space.validate(config)
            except ValueError as e:
                raise TableError(f"row {i}: {e}") from None
            if not math.isfinite(y):
                raise TableError(f"row {i}: non-finite objective {y!r}")
        ys = [y for _, y in self.rows]
        if min(ys) == max(ys):
            raise TableError("all rows achieve identical objectives; table rejected")

    def __len__(self) -> int:
        return len(self.rows)


def _split_columns(space: sp.SearchSpace) -> tuple[list[int], list[int]]:
    nums = [i for i, p in enumerate(space.parameters) if not p.is_categorical]
    cats = [i for i, p in enumerate(space.parameters) if p.is_categorical]
    return nums, cats


def unit_design(space: sp.SearchSpace, configs: Iterable[sp.Configuration]):
    """Unit-cube design matrices: (float array over numeric dims, int array over categorical)."""
    nums, cats = _split_columns(space)
    units = [sp.to_unit(space, c) for c in configs]
    num = np.array([[u[i] for i in nums] for u in units], dtype=np.float64)
    cat = np.array([[u[i] for i in cats] for u in units], dtype=np.int64)
    return num.reshape(len(units), len(nums)), cat.reshape(len(units), len(cats))


@dataclass(frozen=True)
class SurrogateBenchmark:
    """kNN regressor over an offline table, queried in unit-cube coordinates.

    Distance is Euclidean over numeric dimensions plus a 0/1 mismatch term per
    categorical dimension. Ties at the k-th neighbor break by row index.
    """

    table: OfflineTable
    k: int = 3

    def __post_init__(self) -> None:
        if not 1 <= self.k <= len(self.table):
            raise ValueError(f"k={self.k} outside [1, {len(self.table)}]")
        num, cat = unit_design(self.table.space, (c for c, _ in self.table.rows))
        object.__setattr__(self, "_num", num)
        object.__setattr__(self, "_cat", cat)
        object.__setattr__(
            self, "_ys", np.array([y for _, y in self.table.rows], dtype=np.float64)
        )

    def predict(self, config: sp.Configuration) -> float:
        self.table.space.validate(config)
        nums, cats = _split_columns(self.table.space)
        u = sp.to_unit(self.table.space, config)
        d2 = np.zeros(len(self.table), dtype=np.float64)
        if nums:
            q = np.array([u[i] for i in nums], dtype=np.float64)
            d2 += ((self._num - q) ** 2).sum(axis=1)
        if cats:
            q = np.array([u[i] for i in cats], dtype=np.int64)
            d2 += (self._cat != q).sum(axis=1).astype(np.float64)
        order = np.argsort(d2, kind="stable")[: self.k]
        return float(self._ys[order].mean())


def knn_predict(surrogate: SurrogateBenchmark, config: sp.Configuration) -> float:
    return surrogate.predict(config)


def surrogate_task(
    surrogate: SurrogateBenchmark, task_id: str | None = None, family: str = "surrogate"
) -> BenchmarkTask:
    tid = task_id or f"surrogate/{surrogate.table.space.id}"
    return BenchmarkTask(tid, surrogate.table.space, surrogate.predict, family)


def marginal_best(table: OfflineTable, param: str):
    """The observed value of `param` with the best mean objective, marginalizing
    over all other parameters. Ties break toward the smallest value."""
    idx = table.space.index_of(param)
    groups: dict = {}
    for config, y in table.rows:
        groups.setdefault(config[idx], []).append(y)
    best_value, best_mean = None, math.inf
    for value in sorted(groups):
        mean = float(np.mean(groups[value]))
        if mean < best_mean:
            best_value, best_mean = value, mean
    return best_value


def mask_task(table: OfflineTable, params: Iterable[str], k: int = 3) -> BenchmarkTask:
    """Fix each masked parameter at its marginal-best value and expose the
    reduced space backed by the parent kNN surrogate."""
    masked = list(dict.fromkeys(params))
    if not 1 <= len(masked) <= 2:
        raise ValueError(f"can mask 1 or 2 parameters, got {len(masked)}")
    indices = {name: table.space.index_of(name) for name in masked}
    keep = [i for i in range(table.space.dim) if i not in indices.values()]
    if not keep:
        raise ValueError("masking would leave an empty search space")
    fixed = {indices[name]: marginal_best(table, name) for name in masked}

    reduced = sp.SearchSpace(
        f"{table.space.id}-mask-{'+'.join(masked)}",
        tuple(table.space.parameters[i] for i in keep),
    )
    surrogate = SurrogateBenchmark(table, k)

    def oracle(config: sp.Configuration) -> float:
        full = [None] * table.space.dim
        for pos, v in fixed.items():
            full[pos] = v
        for pos, v in zip(keep, config):
            full[pos] = v
        return surrogate.predict(tuple(full))

    return BenchmarkTask(id=reduced.id, space=reduced, oracle=oracle, family="masked-surrogate")


# ---------------------------------------------------------------------------
# Table files: one space-header line, then one JSON row per line
# ---------------------------------------------------------------------------


def load_offline_table(path) -> OfflineTable:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    if not lines:
        raise TableError(f"{path}: empty table file")
    try:
        space = sp.space_from_json(json.loads(lines[0]))
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise TableError(f"{path}: bad space header: {e}") from None
    rows = []
    for i, line in enumerate(lines[1:]):
        try:
            doc = json.loads(line)
            config = space.config_from_dict(doc["config"])
            rows.append((config, float(doc["objective"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise TableError(f"{path}: row {i}: {e}") from None
    return OfflineTable(space, tuple(rows))


def dump_offline_table(table: OfflineTable, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(sp.dumps_space(table.space) + "\n")
        for config, y in table.rows:
            doc = {"config": table.space.config_to_dict(config), "objective": y}
            f.write(json.dumps(doc, sort_keys=True) + "\n")


def table_from_oracle(
    task: BenchmarkTask, n: int, seed: int = 0
) -> OfflineTable:
    """Sample n rows uniformly from a task's oracle (surrogate construction aid)."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        config = sp.sample_uniform(task.space, rng)
        rows.append((config, task.evaluate(config)))
    return OfflineTable(task.space, tuple(rows))
