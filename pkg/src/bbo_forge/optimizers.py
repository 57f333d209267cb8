"""Ask/tell optimizers used to generate trajectories: RS, REA, TPE, BORE, CQR.

Each optimizer owns its history and random source; suggestions are a pure
function of (seed, observations so far). All internal continuous modeling
happens in unit-cube coordinates with 0/1 distance on categorical dimensions.
Argmin/argmax ties always break toward the lowest candidate index.
"""
from __future__ import annotations

import math
from collections import deque
from typing import Sequence

import numpy as np

from . import space as sp

KINDS = ("RS", "REA", "TPE", "BORE", "CQR")


def _scott_bandwidth(values: np.ndarray, floor: float = 1e-3) -> float:
    # Scott's rule with two guards: the configured floor and 1/(n+1), which keeps
    # kernels from collapsing to needles while the sample is still small or
    # degenerate (needle kernels re-propose one point forever).
    n = len(values)
    guard = 1.0 / (n + 1.0)
    if n < 2:
        return max(floor, guard)
    return max(floor, guard, float(np.std(values)) * n ** (-0.2))


def _reflect_unit(x: np.ndarray) -> np.ndarray:
    # fold values back into [0,1]; reflection avoids the point masses that
    # clipping piles up on the boundaries
    x = np.abs(x)
    x = np.where(x > 1.0, 2.0 - x, x)
    return np.clip(x, 0.0, 1.0)


def _parzen_logpdf(queries: np.ndarray, centers: np.ndarray, h: float) -> np.ndarray:
    """Log density of a Parzen mixture over [0,1]: one Gaussian kernel per center
    plus one uniform component, all equally weighted. The uniform component is
    the standard guard against degenerate spikes when few centers exist."""
    z = (queries[:, None] - centers[None, :]) / h
    log_k = -0.5 * z**2 - math.log(h) - 0.5 * math.log(2 * math.pi)
    m = np.maximum(log_k.max(axis=1), 0.0)
    kernel_sum = np.exp(log_k - m[:, None]).sum(axis=1)
    return m + np.log((kernel_sum + np.exp(-m)) / (len(centers) + 1))


class BaseOptimizer:
    """Shared ask/tell plumbing; subclasses implement _propose."""

    kind = "?"

    def __init__(self, space: sp.SearchSpace, seed: int):
        self.space = space
        self.rng = np.random.default_rng(seed)
        self.history: list[tuple[sp.Configuration, float]] = []
        self._num_dims = [i for i, p in enumerate(space.parameters) if not p.is_categorical]
        self._cat_dims = [i for i, p in enumerate(space.parameters) if p.is_categorical]

    def suggest(self) -> sp.Configuration:
        config = self._propose()
        self.space.validate(config)
        return config

    def observe(self, config: sp.Configuration, y: float) -> None:
        self.space.validate(config)
        self.history.append((config, float(y)))

    def _propose(self) -> sp.Configuration:
        raise NotImplementedError

    # -- helpers over the recorded history ---------------------------------

    def _unit_history(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        units = [sp.to_unit(self.space, c) for c, _ in self.history]
        num = np.array([[u[i] for i in self._num_dims] for u in units], dtype=np.float64)
        cat = np.array([[u[i] for i in self._cat_dims] for u in units], dtype=np.int64)
        ys = np.array([y for _, y in self.history], dtype=np.float64)
        n = len(units)
        return num.reshape(n, len(self._num_dims)), cat.reshape(n, len(self._cat_dims)), ys

    def _uniform_pool(self, size: int) -> list[sp.Configuration]:
        return [sp.sample_uniform(self.space, self.rng) for _ in range(size)]

    def _pool_units(self, pool: Sequence[sp.Configuration]) -> tuple[np.ndarray, np.ndarray]:
        units = [sp.to_unit(self.space, c) for c in pool]
        num = np.array([[u[i] for i in self._num_dims] for u in units], dtype=np.float64)
        cat = np.array([[u[i] for i in self._cat_dims] for u in units], dtype=np.int64)
        return num.reshape(len(pool), len(self._num_dims)), cat.reshape(len(pool), len(self._cat_dims))

    @staticmethod
    def _dist2(q_num, q_cat, num, cat) -> np.ndarray:
        d2 = np.zeros(len(num), dtype=np.float64)
        if q_num.size or num.shape[1]:
            d2 += ((num - q_num) ** 2).sum(axis=1)
        if cat.shape[1]:
            d2 += (cat != q_cat).sum(axis=1).astype(np.float64)
        return d2


class RandomSearch(BaseOptimizer):
    kind = "RS"

    def _propose(self) -> sp.Configuration:
        return sp.sample_uniform(self.space, self.rng)


class RegularizedEvolution(BaseOptimizer):
    """Aging evolution: tournament selection plus single-parameter mutation.

    The population is a FIFO ring; once it is full, observing a new member
    evicts the oldest one regardless of fitness. Mutation picks one parameter
    uniformly: categorical parameters re-draw a fresh uniform value, numerical
    parameters take a reflected Gaussian step in unit coordinates so the search
    can refine around elites on continuous landscapes.
    """

    kind = "REA"

    def __init__(self, space, seed, population_size: int = 10, tournament_size: int = 3,
                 mutation_sigma: float = 0.2):
        super().__init__(space, seed)
        self.population_size = population_size
        self.tournament_size = tournament_size
        self.mutation_sigma = mutation_sigma
        self.population: deque[tuple[sp.Configuration, float]] = deque()

    def observe(self, config, y) -> None:
        super().observe(config, y)
        self.population.append((config, float(y)))
        while len(self.population) > self.population_size:
            self.population.popleft()

    def _propose(self) -> sp.Configuration:
        if not self.population:
            return sp.sample_uniform(self.space, self.rng)
        members = list(self.population)
        n = len(members)
        size = min(self.tournament_size, n)
        drawn = self.rng.choice(n, size=size, replace=False)
        parent = min((members[i] for i in drawn), key=lambda m: m[1])[0]
        dim = int(self.rng.integers(self.space.dim))
        mutant = list(parent)
        if self.space.parameters[dim].is_categorical:
            mutant[dim] = sp.sample_uniform(self.space, self.rng)[dim]
        else:
            u = list(sp.to_unit(self.space, parent))
            stepped = np.array([u[dim] + self.rng.normal(0.0, self.mutation_sigma)])
            u[dim] = float(_reflect_unit(stepped)[0])
            mutant[dim] = sp.from_unit(self.space, u)[dim]
        return tuple(mutant)


class TPE(BaseOptimizer):
    """Density-ratio search: split history at the gamma-quantile of objectives,
    fit per-dimension Parzen (numeric) / smoothed-frequency (categorical)
    estimators for the good and bad sets, sample candidates from the good
    model, and keep the candidate with the highest good/bad likelihood ratio.
    """

    kind = "TPE"

    def __init__(self, space, seed, gamma: float = 0.25, n_init: int = 4, pool_size: int = 64,
                 bandwidth_floor: float = 1e-3, sample_bw_factor: float = 3.0):
        super().__init__(space, seed)
        self.gamma = gamma
        self.n_init = n_init
        self.pool_size = pool_size
        self.bandwidth_floor = bandwidth_floor
        # candidates are drawn with an inflated bandwidth but scored with the
        # plain one, which widens exploration without blurring the ratio
        self.sample_bw_factor = sample_bw_factor

    def split_threshold(self) -> float:
        ys = np.array([y for _, y in self.history], dtype=np.float64)
        return float(np.quantile(ys, self.gamma))

    def _propose(self) -> sp.Configuration:
        if len(self.history) < self.n_init:
            return sp.sample_uniform(self.space, self.rng)
        num, cat, ys = self._unit_history()
        y_star = self.split_threshold()
        good = ys < y_star
        if not good.any() or good.all():
            return sp.sample_uniform(self.space, self.rng)

        g_num, b_num = num[good], num[~good]
        g_cat, b_cat = cat[good], cat[~good]

        bw_good = [_scott_bandwidth(g_num[:, d], self.bandwidth_floor)
                   for d in range(len(self._num_dims))]
        bw_bad = [_scott_bandwidth(b_num[:, d], self.bandwidth_floor)
                  for d in range(len(self._num_dims))]

        # sample the candidate pool from the good model, dimension by dimension;
        # component index len(g_num) is the uniform prior component
        pool_num = np.empty((self.pool_size, len(self._num_dims)))
        for d in range(len(self._num_dims)):
            comp = self.rng.integers(len(g_num) + 1, size=self.pool_size)
            draws = _reflect_unit(
                g_num[np.minimum(comp, len(g_num) - 1), d]
                + self.rng.normal(
                    0.0, self.sample_bw_factor * bw_good[d], size=self.pool_size
                )
            )
            uniform = self.rng.random(self.pool_size)
            pool_num[:, d] = np.where(comp == len(g_num), uniform, draws)
        pool_cat = np.empty((self.pool_size, len(self._cat_dims)), dtype=np.int64)
        for j, dim in enumerate(self._cat_dims):
            k = self.space.parameters[dim].cardinality
            counts = np.bincount(g_cat[:, j], minlength=k) + 1.0
            pool_cat[:, j] = self.rng.choice(k, size=self.pool_size, p=counts / counts.sum())

        score = np.zeros(self.pool_size)
        for d in range(len(self._num_dims)):
            score += _parzen_logpdf(pool_num[:, d], g_num[:, d], bw_good[d])
            score -= _parzen_logpdf(pool_num[:, d], b_num[:, d], bw_bad[d])
        for j, dim in enumerate(self._cat_dims):
            k = self.space.parameters[dim].cardinality
            p_good = (np.bincount(g_cat[:, j], minlength=k) + 1.0) / (len(g_cat) + k)
            p_bad = (np.bincount(b_cat[:, j], minlength=k) + 1.0) / (len(b_cat) + k)
            score += np.log(p_good[pool_cat[:, j]]) - np.log(p_bad[pool_cat[:, j]])

        best = int(np.argmax(score))  # argmax returns the first (lowest-index) maximum
        return self._assemble(pool_num[best], pool_cat[best])

    def _assemble(self, num_row: np.ndarray, cat_row: np.ndarray) -> sp.Configuration:
        u = [0.0] * self.space.dim
        for d, dim in enumerate(self._num_dims):
            u[dim] = float(num_row[d])
        for j, dim in enumerate(self._cat_dims):
            u[dim] = int(cat_row[j])
        return sp.from_unit(self.space, u)


class BORE(BaseOptimizer):
    """Density-ratio search as classification: label the best gamma-fraction of
    history 1, score uniform candidates by an inverse-distance-weighted k-NN
    class-probability estimate, and keep the highest-probability candidate.
    """

    kind = "BORE"

    def __init__(self, space, seed, gamma: float = 0.25, n_init: int = 4, pool_size: int = 64,
                 knn_k: int = 5):
        super().__init__(space, seed)
        self.gamma = gamma
        self.n_init = n_init
        self.pool_size = pool_size
        self.knn_k = knn_k

    def _propose(self) -> sp.Configuration:
        n = len(self.history)
        if n < self.n_init:
            return sp.sample_uniform(self.space, self.rng)
        num, cat, ys = self._unit_history()
        n_good = int(math.floor(self.gamma * n))
        if n_good < 1 or n_good >= n:
            return sp.sample_uniform(self.space, self.rng)
        labels = np.zeros(n)
        labels[np.argsort(ys, kind="stable")[:n_good]] = 1.0

        pool = self._uniform_pool(self.pool_size)
        pool_num, pool_cat = self._pool_units(pool)
        k = min(self.knn_k, n)
        score = np.empty(self.pool_size)
        for i in range(self.pool_size):
            d2 = self._dist2(pool_num[i], pool_cat[i], num, cat)
            nearest = np.argsort(d2, kind="stable")[:k]
            w = 1.0 / (np.sqrt(d2[nearest]) + 1e-12)
            score[i] = float(np.average(labels[nearest], weights=w))
        return pool[int(np.argmax(score))]


class CQR(BaseOptimizer):
    """Quantile-surrogate search with split-conformal calibration.

    History is split into fit/calibration halves (even/odd observation index).
    Per quantile level, predictions are k-NN empirical quantiles over the fit
    half, shifted by a conformal offset computed from calibration residuals.
    One level is Thompson-sampled per suggestion and the pool candidate with
    the lowest calibrated prediction wins.
    """

    kind = "CQR"

    def __init__(self, space, seed, n_init: int = 4, pool_size: int = 64, knn_k: int = 7,
                 quantile_grid: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)):
        super().__init__(space, seed)
        self.n_init = n_init
        self.pool_size = pool_size
        self.knn_k = knn_k
        self.quantile_grid = tuple(quantile_grid)

    def _knn_quantiles(self, q_num, q_cat, fit_num, fit_cat, fit_ys, k) -> np.ndarray:
        d2 = self._dist2(q_num, q_cat, fit_num, fit_cat)
        nearest = np.argsort(d2, kind="stable")[:k]
        return np.quantile(fit_ys[nearest], self.quantile_grid)

    def conformal_offsets(self) -> np.ndarray:
        """Empirical offsets per quantile level from the calibration half."""
        num, cat, ys = self._unit_history()
        fit_idx = np.arange(len(ys)) % 2 == 0
        cal_idx = ~fit_idx
        fit_num, fit_cat, fit_ys = num[fit_idx], cat[fit_idx], ys[fit_idx]
        k = min(self.knn_k, len(fit_ys))
        residuals = np.empty((int(cal_idx.sum()), len(self.quantile_grid)))
        for row, i in enumerate(np.flatnonzero(cal_idx)):
            preds = self._knn_quantiles(num[i], cat[i], fit_num, fit_cat, fit_ys, k)
            residuals[row] = ys[i] - preds
        return np.array(
            [np.quantile(residuals[:, j], q) for j, q in enumerate(self.quantile_grid)]
        )

    def _propose(self) -> sp.Configuration:
        n = len(self.history)
        if n < max(self.n_init, 2):
            return sp.sample_uniform(self.space, self.rng)
        num, cat, ys = self._unit_history()
        fit_idx = np.arange(n) % 2 == 0
        fit_num, fit_cat, fit_ys = num[fit_idx], cat[fit_idx], ys[fit_idx]
        k = min(self.knn_k, len(fit_ys))
        offsets = self.conformal_offsets()

        j = int(self.rng.integers(len(self.quantile_grid)))
        pool = self._uniform_pool(self.pool_size)
        pool_num, pool_cat = self._pool_units(pool)
        preds = np.empty(self.pool_size)
        for i in range(self.pool_size):
            q = self._knn_quantiles(pool_num[i], pool_cat[i], fit_num, fit_cat, fit_ys, k)
            preds[i] = q[j] + offsets[j]
        return pool[int(np.argmin(preds))]


OPTIMIZERS: dict[str, type[BaseOptimizer]] = {
    cls.kind: cls for cls in (RandomSearch, RegularizedEvolution, TPE, BORE, CQR)
}


def make_optimizer(kind: str, space: sp.SearchSpace, seed: int, **kwargs) -> BaseOptimizer:
    if kind not in OPTIMIZERS:
        raise KeyError(f"unknown optimizer kind {kind!r}; known: {KINDS}")
    return OPTIMIZERS[kind](space, seed, **kwargs)
