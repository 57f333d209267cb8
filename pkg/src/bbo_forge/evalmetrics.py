"""Comparison metrics (best-so-far curves, average rank, normalized regret,
marginal-density divergence) and the compute-scaling analysis (Pareto
extraction plus power-law fit)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from . import space as sp
from .runner import Trajectory


def best_so_far(objectives: Sequence[float]) -> np.ndarray:
    """Running minimum."""
    if len(objectives) == 0:
        raise ValueError("empty objective sequence")
    return np.minimum.accumulate(np.asarray(objectives, dtype=np.float64))


@dataclass
class CurveSet:
    """Per (method, task): mean and standard deviation over seeds of the
    best-so-far curve, plus the seed count."""

    mean: dict[tuple[str, str], np.ndarray]
    std: dict[tuple[str, str], np.ndarray]
    n_seeds: dict[tuple[str, str], int]

    @property
    def methods(self) -> list[str]:
        return sorted({m for m, _ in self.mean})

    @property
    def tasks(self) -> list[str]:
        return sorted({t for _, t in self.mean})

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Trajectory]) -> "CurveSet":
        grouped: dict[tuple[str, str], list[np.ndarray]] = {}
        for traj in trajectories:
            grouped.setdefault((traj.optimizer, traj.task_id), []).append(
                best_so_far(traj.objectives())
            )
        mean, std, n = {}, {}, {}
        for key, curves in grouped.items():
            lengths = {len(c) for c in curves}
            if len(lengths) != 1:
                raise ValueError(f"{key}: trajectories of unequal length {lengths}")
            arr = np.stack(curves)
            mean[key] = arr.mean(axis=0)
            std[key] = arr.std(axis=0)
            n[key] = len(curves)
        return cls(mean, std, n)


def average_rank(curves: CurveSet, step: int) -> dict[str, float]:
    """Rank methods per task by mean best-so-far at the step (1 = best, ties
    midranked), then average over tasks."""
    methods, tasks = curves.methods, curves.tasks
    if len(methods) < 2:
        raise ValueError("ranking needs at least two methods")
    for m in methods:
        for t in tasks:
            if (m, t) not in curves.mean:
                raise ValueError(f"method {m!r} missing task {t!r}")
    totals = np.zeros(len(methods))
    for t in tasks:
        values = np.array([curves.mean[(m, t)][step] for m in methods])
        totals += stats.rankdata(values, method="average")
    return {m: totals[i] / len(tasks) for i, m in enumerate(methods)}


def normalized_regret(curve: Sequence[float], y_min: float, y_max: float) -> np.ndarray:
    """Best-so-far rescaled to [0, 1] by the task's pooled extrema; degenerate
    tasks (y_max == y_min) map to all zeros."""
    arr = best_so_far(curve)
    if y_max == y_min:
        return np.zeros_like(arr)
    if y_max < y_min:
        raise ValueError("y_max < y_min")
    return (arr - y_min) / (y_max - y_min)


# ---------------------------------------------------------------------------
# Marginal density comparison
# ---------------------------------------------------------------------------


def _kde_on_grid(values: np.ndarray, grid: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    n = len(values)
    sigma = float(np.std(values))
    h = max(floor, sigma * n ** (-0.2)) if n > 1 else floor
    z = (grid[:, None] - values[None, :]) / h
    density = np.exp(-0.5 * z**2).sum(axis=1) / (n * h * math.sqrt(2 * math.pi))
    total = density.sum()
    return density / total if total > 0 else np.full_like(grid, 1.0 / len(grid))


def marginal_density_compare(
    reference: Sequence[sp.Configuration],
    model: Sequence[sp.Configuration],
    space: sp.SearchSpace,
    grid_points: int = 50,
) -> dict[str, float]:
    """Per-parameter total-variation distance between the two sample sets:
    KDE on a unit-coordinate grid for numerical parameters, index frequencies
    for categorical ones."""
    if not reference or not model:
        raise ValueError("both sample sets must be non-empty")
    ref_units = np.array([sp.to_unit(space, c) for c in reference], dtype=np.float64)
    mod_units = np.array([sp.to_unit(space, c) for c in model], dtype=np.float64)
    grid = np.linspace(0.0, 1.0, grid_points)
    out = {}
    for d, p in enumerate(space.parameters):
        if p.is_categorical:
            ref_freq = np.bincount(ref_units[:, d].astype(int), minlength=p.cardinality)
            mod_freq = np.bincount(mod_units[:, d].astype(int), minlength=p.cardinality)
            out[p.name] = 0.5 * float(
                np.abs(ref_freq / ref_freq.sum() - mod_freq / mod_freq.sum()).sum()
            )
        else:
            pk = _kde_on_grid(ref_units[:, d], grid)
            qk = _kde_on_grid(mod_units[:, d], grid)
            out[p.name] = 0.5 * float(np.abs(pk - qk).sum())
    return out


def uniform_reference_samples(
    space: sp.SearchSpace, n: int, seed: int = 0
) -> list[sp.Configuration]:
    rng = np.random.default_rng(seed)
    return [sp.sample_uniform(space, rng) for _ in range(n)]


# ---------------------------------------------------------------------------
# Scaling analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingPoint:
    n_params: float
    n_tokens: float
    loss: float

    def __post_init__(self) -> None:
        if self.n_params <= 0 or self.n_tokens <= 0 or self.loss <= 0:
            raise ValueError("scaling points must be positive")

    @property
    def compute(self) -> float:
        return 6.0 * self.n_params * self.n_tokens


def pareto_points(
    points: Sequence[ScalingPoint], min_compute: float | None = None
) -> list[ScalingPoint]:
    """Points not dominated by any other with compute <= and loss <=, strict in
    at least one. An optional compute threshold drops the early-convergence
    region first."""
    pool = [p for p in points if min_compute is None or p.compute >= min_compute]
    order = sorted(range(len(pool)), key=lambda i: (pool[i].compute, pool[i].loss))
    keep: list[ScalingPoint] = []
    best_before = math.inf
    i = 0
    while i < len(order):
        j = i
        group_c = pool[order[i]].compute
        while j < len(order) and pool[order[j]].compute == group_c:
            j += 1
        group = [pool[order[k]] for k in range(i, j)]
        group_min = min(p.loss for p in group)
        for p in group:
            if p.loss == group_min and p.loss < best_before:
                keep.append(p)
        best_before = min(best_before, group_min)
        i = j
    return keep


def fit_power_law(points: Sequence[ScalingPoint]) -> tuple[float, float]:
    """Least squares for ln L = ln a - b ln C; returns (a, b)."""
    cs = np.array([p.compute for p in points], dtype=np.float64)
    ls = np.array([p.loss for p in points], dtype=np.float64)
    if len(np.unique(cs)) < 2:
        raise ValueError("need at least two distinct compute values")
    slope, intercept = np.polyfit(np.log(cs), np.log(ls), deg=1)
    return float(np.exp(intercept)), float(-slope)


# ---------------------------------------------------------------------------
# CSV / JSON emitters
# ---------------------------------------------------------------------------


def write_curves_csv(curves: CurveSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "task", "step", "mean_best", "std_best", "n_seeds"])
        for (method, task) in sorted(curves.mean):
            mean = curves.mean[(method, task)]
            std = curves.std[(method, task)]
            for step in range(len(mean)):
                writer.writerow(
                    [method, task, step + 1, repr(mean[step]), repr(std[step]),
                     curves.n_seeds[(method, task)]]
                )


def write_rank_csv(curves: CurveSet, steps: Sequence[int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "method", "average_rank"])
        for step in steps:
            for method, rank in sorted(average_rank(curves, step).items()):
                writer.writerow([step + 1, method, repr(rank)])


def write_summary_json(summary: Mapping, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
