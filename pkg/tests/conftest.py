"""Shared helpers for building random spaces, configurations, and trajectories."""
from __future__ import annotations

import numpy as np

from bbo_forge import space as sp


def random_domain(rng: np.random.Generator, name: str) -> sp.ParameterDomain:
    kind = rng.choice(["uni", "log", "int", "cat"])
    if kind == "uni":
        lo = float(rng.uniform(-10, 10))
        return sp.uniform(name, lo, lo + float(rng.uniform(0.5, 20)))
    if kind == "log":
        lo = float(10.0 ** rng.uniform(-4, 0))
        return sp.log_uniform(name, lo, lo * float(10.0 ** rng.uniform(0.5, 4)))
    if kind == "int":
        lo = int(rng.integers(-5, 5))
        return sp.integer(name, lo, lo + int(rng.integers(1, 12)))
    return sp.categorical(name, int(rng.integers(1, 6)))


def random_space(rng: np.random.Generator, max_dim: int = 5, space_id: str = "rnd") -> sp.SearchSpace:
    dim = int(rng.integers(1, max_dim + 1))
    return sp.SearchSpace(space_id, tuple(random_domain(rng, f"p{i}") for i in range(dim)))


def random_trials(rng: np.random.Generator, space: sp.SearchSpace, n: int):
    trials = []
    for _ in range(n):
        config = sp.sample_uniform(space, rng)
        trials.append((config, float(rng.normal())))
    return trials
