"""Command-line front end: gen / train / solve / eval.

Inference on TSPLIB files runs on unit-square-normalized coordinates but all
reported TSPLIB lengths and gaps use the rounded-distance convention on the
original coordinates, matching the published optima.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields as dataclass_fields
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import baselines, training
from .errors import ConfigError, ParameterError, PointRouteError
from .instance import (
    Instance,
    generate_instances,
    normalize_to_unit_square,
    optimality_gap,
    read_dataset,
    tour_length,
    validate_tour,
    write_dataset,
)
from .model import ModelConfig, init_params
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .rollout import best_of, multi_start_rollout
from .training import Adam, TrainConfig
from .tsplib import TsplibMeta, parse_tsplib, tsplib_tour_length, write_tour

REPORT_HEADER = "dataset,method,mean_len,gap_pct,wallclock_s"
METRICS_HEADER = "epoch,batch,mean_len,loss,grad_norm,wallclock_s"

TSPLIB_GROUPS = (
    ("TSPLIB1~100", 1, 100),
    ("TSPLIB101~500", 101, 500),
    ("TSP501~1002", 501, 1002),
)


def worker_count(n_tasks: int) -> int:
    env = os.environ.get("POINTROUTE_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(n_tasks, cap))


# ---------------------------------------------------------------- config


def _coerce_section(section: str, raw: dict, cls):
    names = {f.name: f.type for f in dataclass_fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"unknown [{section}] keys: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"invalid [{section}] config: {exc}") from exc


def load_train_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Parse a TOML or JSON file with [model] and [train] sections."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        data = tomllib.loads(text)
    unknown = sorted(set(data) - {"model", "train"})
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    model_cfg = _coerce_section("model", dict(data.get("model", {})), ModelConfig)
    train_cfg = _coerce_section("train", dict(data.get("train", {})), TrainConfig)
    return model_cfg, train_cfg


def model_config_from_manifest(config: dict) -> ModelConfig:
    kwargs = {f.name: config[f.name] for f in dataclass_fields(ModelConfig) if f.name in config}
    return ModelConfig(**kwargs)


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    instances = generate_instances(seed=args.seed, n=args.n, count=args.count)
    write_dataset(instances, args.out)
    print(f"wrote {args.count} instances (n={args.n}, seed={args.seed}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_train_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    start_epoch = 0
    adam = Adam(lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay)
    if args.resume:
        store, ck_cfg = load_checkpoint(args.resume, expected_config=model_cfg.manifest())
        start_epoch = int(ck_cfg.get("epoch", 0))
        opt_manifest = Path(str(Path(args.resume)).removesuffix(".json") + ".opt.json")
        if opt_manifest.exists():
            state, opt_cfg = load_checkpoint(str(opt_manifest))
            adam.load_state(state, int(opt_cfg.get("step", 0)))
    else:
        store = init_params(model_cfg, seed=train_cfg.seed)

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", encoding="utf-8") as metrics:
        metrics.write(METRICS_HEADER + "\n")

        def sink(row: dict) -> None:
            metrics.write(
                f"{row['epoch']},{row['batch']},{row['mean_len']:.6f},"
                f"{row['loss']:.6f},{row['grad_norm']:.6f},{row['wallclock_s']:.3f}\n"
            )
            metrics.flush()

        def save(epoch: int, st, opt) -> None:
            stem = out_dir / f"ckpt_epoch{epoch}"
            save_checkpoint(st, str(stem), {**model_cfg.manifest(), "epoch": epoch})
            save_checkpoint(opt.state_store(), str(stem) + ".opt",
                            {**model_cfg.manifest(), "step": opt.t})

        training.train(train_cfg, model_cfg, store, sink=sink,
                       checkpoint_fn=save, adam=adam, start_epoch=start_epoch)

    final = out_dir / "ckpt_final"
    save_checkpoint(store, str(final), {**model_cfg.manifest(), "epoch": train_cfg.epochs})
    save_checkpoint(adam.state_store(), str(final) + ".opt",
                    {**model_cfg.manifest(), "step": adam.t})
    print(f"training done; checkpoint at {final}.json, metrics at {metrics_path}")
    return 0


def _load_single_instance(path) -> tuple[Instance, Optional[TsplibMeta]]:
    path = Path(path)
    if path.suffix == ".tsp":
        return parse_tsplib(path.read_text(encoding="utf-8"))
    if path.suffix in (".json", ".jsonl"):
        line = next(l for l in path.read_text(encoding="utf-8").splitlines() if l.strip())
        return Instance.from_json(line), None
    raise ParameterError(f"unrecognized instance file type: {path}")


def _solve_instance(store, model_cfg: ModelConfig, instance: Instance,
                    mode: str, seed) -> np.ndarray:
    """Normalize, decode all starts, keep the best order."""
    normalized, _, _ = normalize_to_unit_square(instance)
    trajectories = multi_start_rollout(store, model_cfg, normalized, mode=mode, seed=seed)
    return best_of(trajectories).order


def cmd_solve(args) -> int:
    store, ck_config = load_checkpoint(args.checkpoint)
    model_cfg = model_config_from_manifest(ck_config)
    instance, meta = _load_single_instance(args.instance)
    if meta is None:
        meta = TsplibMeta(name=instance.name or "instance", dimension=instance.n)

    order = _solve_instance(store, model_cfg, instance, args.mode, args.seed)
    validate_tour(instance, order)
    length = tour_length(instance, order)
    summary = f"{meta.name} n={instance.n} len={length:.4f}"
    if Path(args.instance).suffix == ".tsp":
        summary += f" rounded={tsplib_tour_length(instance, order)}"
    if args.out:
        Path(args.out).write_text(write_tour(meta, order), encoding="utf-8")
        summary += f" tour={args.out}"
    print(summary)
    return 0


def _load_opt_file(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        return {str(k): float(v) for k, v in json.loads(text).items()}
    table = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, value = line.replace(",", " ").partition(" ")
        table[name] = float(value)
    return table


def _collect_datasets(path) -> list[tuple[str, list[tuple[str, Instance, Optional[TsplibMeta]]]]]:
    """Resolve a dataset argument into named groups of instances."""
    path = Path(path)
    if path.is_dir():
        loaded = []
        for tsp in sorted(path.glob("*.tsp")):
            try:
                inst, meta = parse_tsplib(tsp.read_text(encoding="utf-8"))
            except PointRouteError as exc:
                print(f"skipping {tsp.name}: {exc}", file=sys.stderr)
                continue
            if inst.n > 1002:
                print(f"skipping {tsp.name}: larger than 1002 nodes", file=sys.stderr)
                continue
            loaded.append((inst.name or tsp.stem, inst, meta))
        groups = []
        for label, lo, hi in TSPLIB_GROUPS:
            members = [entry for entry in loaded if lo <= entry[1].n <= hi]
            if members:
                groups.append((label, members))
        return groups
    if path.suffix == ".tsp":
        inst, meta = parse_tsplib(path.read_text(encoding="utf-8"))
        return [(inst.name or path.stem, [(inst.name or path.stem, inst, meta)])]
    instances = read_dataset(path)
    return [(path.stem, [(inst.name or f"{path.stem}[{i}]", inst, None)
                         for i, inst in enumerate(instances)])]


def _method_order(name: str, instance: Instance, meta, solver) -> np.ndarray:
    if name == "model":
        return solver(instance)
    if name == "nn":
        return baselines.best_nearest_neighbor(instance).order
    if name == "nn+2opt":
        return baselines.best_nn_two_opt(instance).order
    raise ParameterError(f"unknown method {name}")


def cmd_eval(args) -> int:
    methods = []
    solver = None
    if args.checkpoint:
        store, ck_config = load_checkpoint(args.checkpoint)
        model_cfg = model_config_from_manifest(ck_config)

        def solver(instance, _store=store, _cfg=model_cfg):
            return _solve_instance(_store, _cfg, instance, args.mode, args.seed)

        methods.append("model")
    if args.baselines:
        methods.extend(["nn", "nn+2opt"])
    if not methods:
        raise ParameterError("nothing to evaluate: pass --checkpoint and/or --baselines")

    opt_table = None
    if args.opt == "hk":
        opt_table = "hk"
    elif args.opt.startswith("file:"):
        opt_table = _load_opt_file(args.opt[5:])
    elif args.opt != "none":
        raise ParameterError(f"--opt must be hk, file:<path> or none, got {args.opt!r}")

    groups = _collect_datasets(args.dataset)
    rows: list[tuple[str, str, float, Optional[float], float]] = []
    plot_tours = []

    for label, members in groups:
        opts: list[Optional[float]] = []
        for name, inst, meta in members:
            if opt_table == "hk":
                hk = baselines.held_karp(inst)
                opts.append(float(tsplib_tour_length(inst, hk.order)) if meta is not None
                            else hk.length)
            elif isinstance(opt_table, dict):
                if name not in opt_table:
                    raise ParameterError(f"no OPT value for {name!r} in --opt file")
                opts.append(opt_table[name])
            else:
                opts.append(None)

        for method in methods:
            t0 = time.perf_counter()

            def run(entry):
                name, inst, meta = entry
                order = _method_order(method, inst, meta, solver)
                validate_tour(inst, order)
                length = (float(tsplib_tour_length(inst, order)) if meta is not None
                          else tour_length(inst, order))
                return order, length

            with ThreadPoolExecutor(max_workers=worker_count(len(members))) as pool:
                results = list(pool.map(run, members))
            wall = time.perf_counter() - t0

            lengths = [length for _, length in results]
            gaps = ([optimality_gap(length, opt) for length, opt in zip(lengths, opts)]
                    if opts[0] is not None else None)
            rows.append((label, method, float(np.mean(lengths)),
                         float(np.mean(gaps)) if gaps is not None else None, wall))
            if args.per_instance:
                for (name, _, _), length, i in zip(members, lengths, range(len(members))):
                    gap = gaps[i] if gaps is not None else None
                    rows.append((name, method, length, gap, wall / len(members)))
            if method == "model" and args.plot_out:
                for (name, inst, _), (order, _) in zip(members, results):
                    plot_tours.append({
                        "dataset": label,
                        "name": name,
                        "order": [int(i) for i in order],
                        "coords": inst.coords[np.asarray(order)].tolist(),
                    })

    lines = [REPORT_HEADER]
    for label, method, mean_len, gap, wall in rows:
        gap_text = "" if gap is None else f"{gap:.4f}"
        lines.append(f"{label},{method},{mean_len:.6f},{gap_text},{wall:.3f}")
    report = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    else:
        sys.stdout.write(report)
    if args.plot_out:
        Path(args.plot_out).write_text(json.dumps({"tours": plot_tours}, indent=1),
                                       encoding="utf-8")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointroute",
                                     description="neural TSP solver and benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a uniform random dataset (JSON lines)")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--n", type=int, required=True, help="nodes per instance")
    p_gen.add_argument("--count", type=int, required=True, help="number of instances")
    p_gen.add_argument("--out", required=True, help="output dataset path")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="train a policy from a config file")
    p_train.add_argument("--config", required=True, help="TOML or JSON config")
    p_train.add_argument("--out", default="train_out", help="output directory")
    p_train.add_argument("--resume", help="checkpoint stem to resume from")
    p_train.set_defaults(func=cmd_train)

    p_solve = sub.add_parser("solve", help="solve one instance with a checkpoint")
    p_solve.add_argument("instance", help=".tsp or .json instance file")
    p_solve.add_argument("--checkpoint", required=True, help="checkpoint stem or .json path")
    p_solve.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p_solve.add_argument("--seed", type=int, default=None, help="rollout seed (sample mode)")
    p_solve.add_argument("--out", help="write the tour here (.tour format)")
    p_solve.set_defaults(func=cmd_solve)

    p_eval = sub.add_parser("eval", help="benchmark methods over a dataset")
    p_eval.add_argument("dataset", help=".jsonl dataset, .tsp file, or directory of .tsp")
    p_eval.add_argument("--checkpoint", help="checkpoint stem; enables the model method")
    p_eval.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--baselines", action="store_true",
                        help="also run nearest-neighbor and nn+2opt")
    p_eval.add_argument("--opt", default="none", help="OPT source: hk, file:<path>, or none")
    p_eval.add_argument("--per-instance", action="store_true", dest="per_instance")
    p_eval.add_argument("--plot-out", dest="plot_out",
                        help="write model tour coordinates as JSON for plotting")
    p_eval.add_argument("--out", help="report CSV path (default: stdout)")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except PointRouteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
