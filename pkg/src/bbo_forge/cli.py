"""Command-line pipeline: generate -> augment -> encode -> tokenize -> split ->
train -> optimize -> evaluate -> scaling-fit.

Stages read a TOML config (overridable with --set key=value) and write fixed
artifact names under the data directory (--data-dir or $BBO_FORGE_DATA_DIR),
so re-running a stage with the same config reproduces identical bytes.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import bench, codec, evalmetrics, infer, runner, tok
from . import model as model_mod
from . import space as sp


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def load_config(path: str | None, overrides: list[str]) -> dict:
    config: dict = {}
    if path:
        with open(path, "rb") as f:
            config = tomllib.load(f)
    for item in overrides:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return config


def _seed_indices(value) -> list[int]:
    if isinstance(value, int):
        return list(range(value))
    return [int(v) for v in value]


def build_tasks(config: dict, data_dir: Path) -> list[bench.BenchmarkTask]:
    specs = config.get("tasks", [])
    if not specs:
        raise CliError("config has no [[tasks]] entries")
    tasks = []
    for entry in specs:
        kind = entry.get("type")
        if kind == "synthetic":
            tasks.append(bench.synthetic_task(entry["name"]))
        elif kind == "surrogate":
            table = bench.load_offline_table(data_dir / entry["path"])
            surrogate = bench.SurrogateBenchmark(table, k=int(entry.get("k", 3)))
            tasks.append(bench.surrogate_task(surrogate, entry.get("id")))
        elif kind == "masked":
            table = bench.load_offline_table(data_dir / entry["path"])
            tasks.append(bench.mask_task(table, entry["mask"], k=int(entry.get("k", 3))))
        else:
            raise CliError(f"unknown task type {kind!r}")
    return tasks


def quant_config(config: dict) -> codec.QuantizationConfig:
    return codec.QuantizationConfig(int(config.get("codec", {}).get("q", 1000)))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_generate(config: dict, data_dir: Path, args) -> int:
    grid = config.get("grid", {})
    tasks = build_tasks(config, data_dir)
    kinds = grid.get("optimizers", ["RS"])
    seeds = _seed_indices(grid.get("seeds", 1))
    T = int(grid.get("T", 100))
    out = data_dir / "trajectories"
    if args.dry_run:
        print(f"generate: {len(kinds)} optimizers x {len(tasks)} tasks x {len(seeds)} seeds "
              f"= {len(kinds) * len(tasks) * len(seeds)} runs of T={T} -> {out}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    manifest = runner.run_grid(
        tasks, kinds, seeds, T, out_dir=out, master_seed=args.seed, jobs=args.jobs
    )
    runner.save_manifest(manifest, out / "manifest.jsonl")
    failed = [r for r in manifest.records if r.status != "ok"]
    print(f"generate: {len(manifest)} runs, {len(failed)} failed -> {out}")
    for r in failed:
        print(f"  failed: {r.optimizer}/{r.task_id}/seed{r.seed_index}: {r.error}")
    return 1 if failed else 0


def _load_run_trajectories(directory: Path) -> list[tuple[runner.Trajectory, dict]]:
    manifest = runner.load_manifest(directory / "manifest.jsonl")
    out = []
    for record in manifest.records:
        if record.status != "ok" or not record.path:
            continue
        traj = runner.load_trajectory(record.path)
        out.append((traj, {"optimizer": record.optimizer, "task_id": record.task_id,
                           "seed_index": record.seed_index}))
    return out


def stage_augment(config: dict, data_dir: Path, args) -> int:
    aug = config.get("augment", {})
    n_perm = int(aug.get("permutations", 1))
    prefix_lengths = [int(x) for x in aug.get("prefix_lengths", [5, 10, 20, 50, 100])]
    src = data_dir / "trajectories"
    out = data_dir / "augmented"
    if args.dry_run:
        print(f"augment: {n_perm} permutations x prefix lengths {prefix_lengths} "
              f"from {src} -> {out}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    loaded = _load_run_trajectories(src)
    rng = np.random.default_rng(args.seed)
    rows = []
    index = 0
    for traj, meta in loaded:
        variants = [(traj, {"permutation": None})]
        for _ in range(max(0, n_perm - 1)):
            permuted = codec.permute_augment(traj, rng)
            variants.append((permuted, {"permutation": list(permuted.space.names)}))
        expanded = []
        for variant, note in variants:
            expanded.append((variant, dict(note, prefix=None)))
            for t_prime in prefix_lengths:
                if t_prime < variant.T:
                    expanded.append(
                        (codec.prefix_augment(variant, t_prime), dict(note, prefix=t_prime))
                    )
        for variant, note in expanded:
            path = out / f"aug{index:06d}.jsonl"
            runner.save_trajectory(variant, path)
            rows.append({"path": str(path), "augmentation": note, **meta})
            index += 1
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"augment: {len(loaded)} source trajectories -> {index} records -> {out}")
    return 0


def stage_encode(config: dict, data_dir: Path, args) -> int:
    quant = quant_config(config)
    src = data_dir / "augmented"
    if not (src / "manifest.jsonl").exists():
        src = data_dir / "trajectories"
    corpus_path = data_dir / "corpus.txt"
    sidecar_path = data_dir / "corpus.manifest.json"
    if args.dry_run:
        print(f"encode: {src} -> {corpus_path} (+ sidecar), Q={quant.q}")
        return 0

    pairs: list[tuple[runner.Trajectory, codec.EncodedTrajectory]] = []
    sidecar = []
    if (src / "manifest.jsonl").exists() and src.name == "augmented":
        with open(src / "manifest.jsonl", "r", encoding="utf-8") as f:
            rows = [json.loads(line) for line in f if line.strip()]
        for row in rows:
            traj = runner.load_trajectory(row["path"])
            pairs.append((traj, codec.encode_trajectory(traj, quant)))
            sidecar.append(
                {k: row[k] for k in ("task_id", "optimizer", "seed_index", "augmentation")}
            )
    else:
        for traj, meta in _load_run_trajectories(src):
            pairs.append((traj, codec.encode_trajectory(traj, quant)))
            sidecar.append({**meta, "augmentation": None})
    if not pairs:
        raise CliError(f"no trajectories found under {src}")

    with open(corpus_path, "w", encoding="utf-8") as f:
        f.write("\n\n".join(r.text for _, r in pairs) + "\n")
    with open(sidecar_path, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, sort_keys=True)

    violations = 0
    if args.verify:
        for traj, record in pairs:
            _, _, stream = codec.split_encoded(record.text)
            try:
                decoded = codec.decode_trial_stream(traj.space, quant, stream)
                if len(decoded) != traj.T:
                    violations += 1
            except codec.ParseError:
                violations += 1
        print(f"encode: verify found {violations} round-trip violations")
    print(f"encode: {len(pairs)} records -> {corpus_path}")
    return 1 if violations else 0


def read_corpus(path: Path) -> list[str]:
    text = path.read_text(encoding="utf-8")
    return [block for block in text.split("\n\n") if block.strip()]


def stage_tokenize(config: dict, data_dir: Path, args) -> int:
    tok_cfg = config.get("tokenizer", {})
    vocab_size = int(tok_cfg.get("vocab_size", 1024))
    max_records = int(tok_cfg.get("max_records", 200))
    corpus_path = data_dir / "corpus.txt"
    vocab_path = data_dir / "vocab.json"
    if args.dry_run:
        print(f"tokenize: BPE vocab={vocab_size} on <= {max_records} records "
              f"from {corpus_path} -> {vocab_path}")
        return 0
    records = read_corpus(corpus_path)
    tokenizer = tok.train_bpe(records[:max_records], vocab_size)
    tokenizer.save(vocab_path)
    print(f"tokenize: vocab {tokenizer.vocab_size} (+1 eos) -> {vocab_path}")
    return 0


def stage_split(config: dict, data_dir: Path, args) -> int:
    split_cfg = config.get("split", {})
    src = data_dir / "trajectories"
    out = data_dir / "splits.json"
    if args.dry_run:
        print(f"split: fraction={split_cfg.get('holdout_fraction', 0.1)} "
              f"holdout_spaces={split_cfg.get('holdout_spaces', [])} -> {out}")
        return 0
    task_spaces: dict[str, str] = {}
    for traj, _ in _load_run_trajectories(src):
        task_spaces[traj.task_id] = traj.space_id
    splits = runner.make_splits(
        task_spaces,
        float(split_cfg.get("holdout_fraction", 0.1)),
        split_cfg.get("holdout_spaces", []),
        seed=args.seed,
    )
    doc = {
        "train": list(splits.train),
        "val_unseen_task": list(splits.val_unseen_task),
        "val_unseen_space": list(splits.val_unseen_space),
    }
    with open(out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    print(f"split: {len(splits.train)} train / {len(splits.val_unseen_task)} unseen-task "
          f"/ {len(splits.val_unseen_space)} unseen-space -> {out}")
    return 0


def model_config_from(config: dict, vocab_size: int) -> model_mod.ModelConfig:
    m = config.get("model", {})
    return model_mod.ModelConfig(
        n_layers=int(m.get("n_layers", 3)),
        n_heads=int(m.get("n_heads", 4)),
        n_kv_groups=int(m.get("n_kv_groups", 2)),
        model_dim=int(m.get("model_dim", 64)),
        head_dim=int(m.get("head_dim", 32)),
        ffn_dim=int(m.get("ffn_dim", 192)),
        vocab_size=vocab_size,
        context_length=int(m.get("context_length", 512)),
    )


def stage_train(config: dict, data_dir: Path, args) -> int:
    train_cfg = config.get("train", {})
    corpus_path = data_dir / "corpus.txt"
    ckpt_path = data_dir / "model.ckpt"
    loss_path = data_dir / "loss.csv"
    if args.dry_run:
        print(f"train: corpus={corpus_path} -> {ckpt_path}, {loss_path}")
        return 0
    records = read_corpus(corpus_path)
    tokenizer = tok.Tokenizer.load(data_dir / "vocab.json")
    sidecar_path = data_dir / "corpus.manifest.json"
    splits_path = data_dir / "splits.json"
    train_records, val_records = records, []
    if splits_path.exists() and sidecar_path.exists():
        with open(splits_path, "r", encoding="utf-8") as f:
            splits = json.load(f)
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
        val_tasks = set(splits["val_unseen_task"]) | set(splits["val_unseen_space"])
        train_records = [r for r, m in zip(records, sidecar) if m["task_id"] not in val_tasks]
        val_records = [r for r, m in zip(records, sidecar) if m["task_id"] in val_tasks]
    if not val_records:
        n_val = max(1, int(0.05 * len(records)))
        train_records, val_records = records[n_val:], records[:n_val]

    mcfg = model_config_from(config, tokenizer.vocab_size + 1)
    tcfg = model_mod.TrainConfig(
        learning_rate=float(train_cfg.get("learning_rate", 1e-2)),
        global_batch_size=int(train_cfg.get("global_batch_size", 8)),
        total_tokens=int(train_cfg.get("total_tokens", 1_000_000)),
        eval_interval=int(train_cfg.get("eval_interval", 50)),
        seed=args.seed,
    )
    docs = [tokenizer.tokenize(r) for r in train_records]
    val_docs = [tokenizer.tokenize(r) for r in val_records]
    ckpt = model_mod.train_model(docs, mcfg, tcfg, val_docs=val_docs)
    model_mod.save_checkpoint(ckpt, ckpt_path)
    with open(loss_path, "w", encoding="utf-8") as f:
        f.write("step,split,loss\n")
        for step, split, loss in ckpt.loss_history:
            f.write(f"{step},{split},{loss!r}\n")
    final_val = [x for x in ckpt.loss_history if x[1] == "val"]
    tail = f", final val loss {final_val[-1][2]:.4f}" if final_val else ""
    print(f"train: {ckpt.step} steps{tail} -> {ckpt_path}")
    return 0


def stage_optimize(config: dict, data_dir: Path, args) -> int:
    opt_cfg = config.get("optimize", {})
    algorithm = opt_cfg.get("algorithm", "RS")
    T = int(opt_cfg.get("T", 50))
    seeds = _seed_indices(opt_cfg.get("seeds", 1))
    temperature = float(opt_cfg.get("temperature", 1.0))
    out = data_dir / "model-trajectories"
    if args.dry_run:
        tasks = config.get("tasks", [])
        print(f"optimize: <algorithm>:{algorithm}, {len(tasks)} tasks x {len(seeds)} seeds, "
              f"T={T} -> {out}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    ckpt = model_mod.load_checkpoint(data_dir / "model.ckpt")
    tokenizer = tok.Tokenizer.load(data_dir / "vocab.json")
    tasks = build_tasks(config, data_dir)
    quant = quant_config(config)
    rows = []
    for task in tasks:
        for idx in seeds:
            seed = runner.derive_seed(args.seed, f"model:{algorithm}", task.id, idx)
            traj = infer.optimize_with_model(
                ckpt, tokenizer, task, algorithm, T, seed,
                sampler=infer.SamplerConfig(temperature=temperature), quant=quant,
            )
            path = out / f"model__{runner._safe(task.id)}__{idx}.jsonl"
            runner.save_trajectory(traj, path)
            rows.append({"task_id": task.id, "optimizer": traj.optimizer,
                         "seed_index": idx, "seed": seed, "status": "ok", "path": str(path)})
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as f:
        f.write(json.dumps({"optimizers": [f"model:{algorithm}"],
                            "task_ids": [t.id for t in tasks],
                            "seed_indices": seeds}, sort_keys=True) + "\n")
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"optimize: {len(rows)} model trajectories -> {out}")
    return 0


def stage_evaluate(config: dict, data_dir: Path, args) -> int:
    eval_cfg = config.get("evaluate", {})
    dirs = eval_cfg.get("dirs", ["trajectories", "model-trajectories"])
    out = data_dir / "metrics"
    if args.dry_run:
        print(f"evaluate: {dirs} -> {out}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    trajectories = []
    for name in dirs:
        directory = data_dir / name
        if (directory / "manifest.jsonl").exists():
            trajectories.extend(t for t, _ in _load_run_trajectories(directory))
    if not trajectories:
        raise CliError(f"no trajectories found in {dirs}")
    curves = evalmetrics.CurveSet.from_trajectories(trajectories)
    evalmetrics.write_curves_csv(curves, out / "curves.csv")

    lengths = {len(v) for v in curves.mean.values()}
    last = min(lengths) - 1
    steps = [int(s) for s in eval_cfg.get("rank_steps", [last])]
    summary: dict = {"methods": curves.methods, "tasks": curves.tasks}
    if len(curves.methods) >= 2 and len(lengths) == 1:
        evalmetrics.write_rank_csv(curves, steps, out / "ranks.csv")
        summary["average_rank_at_final"] = evalmetrics.average_rank(curves, last)

    pooled: dict[str, tuple[float, float]] = {}
    for traj in trajectories:
        ys = traj.objectives()
        lo, hi = min(ys), max(ys)
        if traj.task_id in pooled:
            plo, phi = pooled[traj.task_id]
            pooled[traj.task_id] = (min(lo, plo), max(hi, phi))
        else:
            pooled[traj.task_id] = (lo, hi)
    summary["final_normalized_regret"] = {}
    for (method, task), mean_curve in sorted(curves.mean.items()):
        lo, hi = pooled[task]
        regret = evalmetrics.normalized_regret(mean_curve, lo, hi)
        summary["final_normalized_regret"][f"{method}::{task}"] = float(regret[-1])
    evalmetrics.write_summary_json(summary, out / "summary.json")
    print(f"evaluate: {len(trajectories)} trajectories, {len(curves.methods)} methods -> {out}")
    return 0


def stage_scaling_fit(config: dict, data_dir: Path, args) -> int:
    scaling_cfg = config.get("scaling", {})
    out = data_dir / "scaling.json"
    points_file = scaling_cfg.get("points_file")
    if args.dry_run:
        print(f"scaling-fit: {points_file or 'config points'} -> {out}")
        return 0
    raw = scaling_cfg.get("points", [])
    if points_file:
        with open(data_dir / points_file, "r", encoding="utf-8") as f:
            raw = json.load(f)
    if not raw:
        raise CliError("no scaling points: set scaling.points or scaling.points_file")
    points = [
        evalmetrics.ScalingPoint(float(p[0]), float(p[1]), float(p[2]))
        if isinstance(p, (list, tuple))
        else evalmetrics.ScalingPoint(p["n_params"], p["n_tokens"], p["loss"])
        for p in raw
    ]
    min_compute = scaling_cfg.get("min_compute")
    front = evalmetrics.pareto_points(points, min_compute)
    a, b = evalmetrics.fit_power_law(front)
    doc = {
        "n_points": len(points),
        "pareto": [
            {"n_params": p.n_params, "n_tokens": p.n_tokens,
             "compute": p.compute, "loss": p.loss}
            for p in front
        ],
        "fit": {"coefficient": a, "exponent": b},
    }
    evalmetrics.write_summary_json(doc, out)
    print(f"scaling-fit: {len(front)} Pareto points, exponent {b:.4f} -> {out}")
    return 0


STAGES = {
    "generate": stage_generate,
    "augment": stage_augment,
    "encode": stage_encode,
    "tokenize": stage_tokenize,
    "split": stage_split,
    "train": stage_train,
    "optimize": stage_optimize,
    "evaluate": stage_evaluate,
    "scaling-fit": stage_scaling_fit,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="bbo-forge",
        description="Trajectory generation, encoding, model training, and model-driven optimization.",
    )
    parser.add_argument("command", choices=sorted(STAGES), help="pipeline stage to run")
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (dotted path)")
    parser.add_argument("--data-dir", default=os.environ.get("BBO_FORGE_DATA_DIR", "bbo-data"))
    parser.add_argument("--seed", type=int, default=0, help="master seed for all derived randomness")
    parser.add_argument("--jobs", type=int, default=1, help="parallel runs for generate")
    parser.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    parser.add_argument("--verify", action="store_true",
                        help="encode only: decode every record back and count violations")
    args = parser.parse_args(argv)

    data_dir = Path(args.data_dir)
    if not args.dry_run:
        data_dir.mkdir(parents=True, exist_ok=True)
    try:
        config = load_config(args.config, args.overrides)
        return STAGES[args.command](config, data_dir, args)
    except (CliError, FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
