"""Run (optimizer x task x seed) grids, persist trajectories, and build
train/validation splits.

Per-run seeds are derived from a master seed so adding tasks or optimizers to
a grid never perturbs the randomness of existing runs.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import space as sp
from .bench import BenchmarkTask
from .optimizers import make_optimizer


@dataclass(frozen=True)
class Trajectory:
    """One optimizer run: ordered (configuration, objective) pairs plus provenance."""

    task_id: str
    space: sp.SearchSpace
    optimizer: str
    seed: int
    trials: tuple[tuple[sp.Configuration, float], ...]

    def __post_init__(self) -> None:
        if not isinstance(self.trials, tuple):
            object.__setattr__(self, "trials", tuple(self.trials))
        if len(self.trials) < 1:
            raise ValueError("trajectory needs at least one trial")
        for config, _ in self.trials:
            self.space.validate(config)

    @property
    def space_id(self) -> str:
        return self.space.id

    @property
    def T(self) -> int:
        return len(self.trials)

    def objectives(self) -> list[float]:
        return [y for _, y in self.trials]


def derive_seed(master_seed: int, kind: str, task_id: str, seed_index: int) -> int:
    digest = hashlib.sha256(
        f"{master_seed}:{kind}:{task_id}:{seed_index}".encode()
    ).digest()
    return int.from_bytes(digest[:8], "little")


def run_trajectory(
    task: BenchmarkTask, kind: str, T: int, seed: int, **optimizer_kwargs
) -> Trajectory:
    """Ask/tell loop for exactly T evaluations; deterministic given the seed."""
    if T < 1:
        raise ValueError("budget T must be >= 1")
    optimizer = make_optimizer(kind, task.space, seed, **optimizer_kwargs)
    trials = []
    for t in range(T):
        config = optimizer.suggest()
        try:
            y = task.evaluate(config)
        except Exception as e:
            raise RuntimeError(f"oracle failed at trial {t + 1} of task {task.id}: {e}") from e
        optimizer.observe(config, y)
        trials.append((config, y))
    return Trajectory(task.id, task.space, kind, seed, tuple(trials))


@dataclass
class RunRecord:
    task_id: str
    optimizer: str
    seed_index: int
    seed: int
    status: str = "pending"
    path: str | None = None
    error: str | None = None


@dataclass
class RunManifest:
    optimizers: list[str]
    task_ids: list[str]
    seed_indices: list[int]
    records: list[RunRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def plan_grid(
    kinds: Sequence[str],
    task_ids: Sequence[str],
    seed_indices: Sequence[int],
    master_seed: int = 0,
) -> RunManifest:
    """Lay out one record per (optimizer, task, seed) without executing anything."""
    if not kinds or not task_ids or not seed_indices:
        raise ValueError("grid axes must be non-empty")
    manifest = RunManifest(list(kinds), list(task_ids), list(seed_indices))
    for kind in kinds:
        for task_id in task_ids:
            for idx in seed_indices:
                manifest.records.append(
                    RunRecord(task_id, kind, idx, derive_seed(master_seed, kind, task_id, idx))
                )
    return manifest


def grid_cardinality(n_optimizers: int, n_tasks: int, n_seeds: int) -> int:
    return n_optimizers * n_tasks * n_seeds


def run_grid(
    tasks: Sequence[BenchmarkTask],
    kinds: Sequence[str],
    seed_indices: Sequence[int],
    T: int,
    out_dir=None,
    master_seed: int = 0,
    jobs: int = 1,
) -> RunManifest:
    """Execute the full grid; failures are recorded per run, the grid continues."""
    by_id = {t.id: t for t in tasks}
    if len(by_id) != len(tasks):
        raise ValueError("duplicate task ids in grid")
    manifest = plan_grid(kinds, list(by_id), seed_indices, master_seed)

    def execute(record: RunRecord) -> None:
        try:
            traj = run_trajectory(by_id[record.task_id], record.optimizer, T, record.seed)
            if out_dir is not None:
                name = f"{record.optimizer}__{_safe(record.task_id)}__{record.seed_index}.jsonl"
                path = str(out_dir / name) if hasattr(out_dir, "__truediv__") else f"{out_dir}/{name}"
                save_trajectory(traj, path)
                record.path = path
            record.status = "ok"
        except Exception as e:  # noqa: BLE001 - per-run failures must not kill the grid
            record.status = "failed"
            record.error = str(e)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(execute, manifest.records))
    else:
        for record in manifest.records:
            execute(record)
    return manifest


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "-" for c in name)


# ---------------------------------------------------------------------------
# Trajectory persistence: metadata line, then one trial per line
# ---------------------------------------------------------------------------


def save_trajectory(traj: Trajectory, path) -> None:
    meta = {
        "task_id": traj.task_id,
        "space_id": traj.space_id,
        "optimizer": traj.optimizer,
        "seed": traj.seed,
        "T": traj.T,
        "space": sp.space_to_json(traj.space),
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(meta, sort_keys=True) + "\n")
        for t, (config, y) in enumerate(traj.trials, start=1):
            row = {"t": t, "config": traj.space.config_to_dict(config), "objective": y}
            f.write(json.dumps(row, sort_keys=True) + "\n")


def load_trajectory(path) -> Trajectory:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    meta = json.loads(lines[0])
    space = sp.space_from_json(meta["space"])
    trials = []
    for line in lines[1:]:
        row = json.loads(line)
        trials.append((space.config_from_dict(row["config"]), float(row["objective"])))
    traj = Trajectory(meta["task_id"], space, meta["optimizer"], int(meta["seed"]), tuple(trials))
    if traj.T != meta["T"]:
        raise ValueError(f"{path}: trial count {traj.T} != declared T={meta['T']}")
    return traj


def save_manifest(manifest: RunManifest, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        header = {
            "optimizers": manifest.optimizers,
            "task_ids": manifest.task_ids,
            "seed_indices": manifest.seed_indices,
        }
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for r in manifest.records:
            f.write(json.dumps(vars(r), sort_keys=True) + "\n")


def load_manifest(path) -> RunManifest:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    header = json.loads(lines[0])
    manifest = RunManifest(header["optimizers"], header["task_ids"], header["seed_indices"])
    manifest.records = [RunRecord(**json.loads(line)) for line in lines[1:]]
    return manifest


# ---------------------------------------------------------------------------
# Train/validation splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitResult:
    train: tuple[str, ...]
    val_unseen_task: tuple[str, ...]
    val_unseen_space: tuple[str, ...]


def make_splits(
    task_spaces: Mapping[str, str],
    holdout_fraction: float = 0.1,
    holdout_spaces: Iterable[str] = (),
    seed: int = 0,
) -> SplitResult:
    """Two-way validation split: whole tasks held out within training spaces,
    plus designated spaces held out entirely. Every task lands in exactly one
    split."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must be in [0, 1)")
    holdout_spaces = set(holdout_spaces)
    known_spaces = set(task_spaces.values())
    unknown = holdout_spaces - known_spaces
    if unknown:
        raise ValueError(f"held-out spaces with no tasks: {sorted(unknown)}")

    val_space = sorted(t for t, s in task_spaces.items() if s in holdout_spaces)
    candidates = sorted(t for t, s in task_spaces.items() if s not in holdout_spaces)
    if not candidates:
        raise ValueError("every space is held out; nothing left to train on")

    rng = np.random.default_rng(seed)
    shuffled = list(candidates)
    rng.shuffle(shuffled)
    n_val = int(round(holdout_fraction * len(candidates)))
    val_task = sorted(shuffled[:n_val])
    train = sorted(shuffled[n_val:])
    if not train:
        raise ValueError("holdout fraction leaves no training tasks")

    # defensive leakage guard: a space cannot be both trained on and held out
    assert not {task_spaces[t] for t in train} & holdout_spaces
    return SplitResult(tuple(train), tuple(val_task), tuple(val_space))
