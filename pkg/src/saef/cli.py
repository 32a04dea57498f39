"""Command-line driver: generate, train, build, evaluate, sweep, baseline-flat.

Exit codes: 0 success, 2 usage error, 1 runtime error. Log verbosity comes
from ``SAEF_LOG`` (error, info or debug); logs go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from saef import bundle as bundle_io
from saef.bundle import BundleError, ExpertBundle, TaskEntry
from saef.config import _ALIASES, RunConfig, _coerce, load_config, parse_k_policy
from saef.forest import build_hierarchy
from saef.simulator import (
    Backbone,
    StreamResult,
    TrainedStream,
    evaluate_trained,
    train_stream,
    world_from_config,
)

log = logging.getLogger("saef")

EVAL_HEADER = ["run_id", "method", "K", "tau", "tau_e", "abar", "a_t", "mean_depth", "theo_speedup", "mean_evals"]


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise RuntimeError(f"cannot write {path}: {e.strerror or e}") from None


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    _write_text(path, buf.getvalue())


def _save_bundle(b: ExpertBundle, path) -> None:
    _write_text(path, bundle_io.dumps(b))


def _load_bundle(path) -> ExpertBundle:
    try:
        return bundle_io.load(path)
    except OSError as e:
        raise RuntimeError(f"cannot read {path}: {e.strerror or e}") from None


def _config(args, base=None):
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip().replace("-", "_")] = value.strip()
    for name in ("seed", "tau", "tau_e", "strategy"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "k", None) is not None:
        overrides["k_policy"] = args.k
    if overrides.get("strategy") == "unlimited":
        overrides["strategy"] = "unlimited_depth"
    try:
        cfg = load_config(getattr(args, "config", None), **_typed(overrides))
        if base is not None:
            # the bundle's config is the base; file and flags override it
            merged = base.to_dict()
            merged.update({k: v for k, v in cfg.to_dict().items() if k in _explicit_keys(args, overrides)})
            cfg = type(base)(**merged)
        return cfg
    except (ValueError, TypeError) as e:
        raise UsageError(str(e)) from None


def _explicit_keys(args, overrides) -> set:
    keys = set(overrides)
    if getattr(args, "config", None):
        for line in Path(args.config).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if "=" in line:
                key = line.split("=", 1)[0].strip()
                keys.add(_ALIASES.get(key, key).replace("-", "_"))
    return keys


def _typed(overrides: dict) -> dict:
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for key, value in overrides.items():
        key = _ALIASES.get(key, key)
        if key not in types:
            raise UsageError(f"unknown config key {key!r}")
        out[key] = _coerce(types[key], value) if isinstance(value, str) else value
    return out


def _trained(b: ExpertBundle) -> TrainedStream:
    if b.world is None:
        raise RuntimeError("bundle has no world; run `saef generate` first")
    if not b.trained or b.class_stats is None:
        raise RuntimeError("bundle has no trained adapters; run `saef train` first")
    cfg = b.config
    return TrainedStream(
        config=cfg,
        backbone=Backbone.create(b.world.d_in, cfg.d, b.world.seed),
        adapters=b.adapters(),
        stats=b.class_stats,
        task_records=b.task_records(),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = _config(args)
    world = world_from_config(cfg)
    tasks = [
        TaskEntry(task_id=t, class_ids=cls, semantic_prototype=world.task_semantic[t])
        for t, cls in enumerate(world.tasks)
    ]
    _save_bundle(ExpertBundle(config=cfg, world=world, tasks=tasks), args.out)
    print(f"generated {len(tasks)} tasks, {world.n_classes} classes -> {args.out}")
    return 0


def cmd_train(args) -> int:
    b = _load_bundle(args.bundle)
    if b.world is None:
        raise RuntimeError("bundle has no world; run `saef generate` first")
    cfg = _config(args, base=b.config)
    trained = train_stream(b.world, cfg)
    tasks = []
    train_log = []
    for entry, adapter, record, history in zip(b.tasks, trained.adapters, trained.task_records, trained.logs):
        tasks.append(TaskEntry(
            task_id=entry.task_id,
            class_ids=entry.class_ids,
            semantic_prototype=entry.semantic_prototype,
            w_down=adapter.w_down,
            w_up=adapter.w_up,
            visual_prototype=record.visual_prototype,
        ))
        row = {
            "task": entry.task_id,
            "cls_first": history[0]["cls"],
            "cls_last": history[-1]["cls"],
            "orth_last": history[-1]["orth"],
        }
        train_log.append(row)
        print(f"task {row['task']}: L_cls {row['cls_first']:.4f} -> {row['cls_last']:.4f}  L_orth {row['orth_last']:.4f}")
    _save_bundle(ExpertBundle(config=cfg, world=b.world, tasks=tasks, class_stats=trained.stats, train_log=train_log), args.out)
    return 0


def cmd_build(args) -> int:
    b = _load_bundle(args.bundle)
    if not b.tasks or not b.trained:
        raise RuntimeError("bundle has no trained adapters; run `saef train` first")
    cfg = _config(args, base=b.config)
    hierarchy = build_hierarchy(b.task_records(), seed=cfg.seed, strategy=cfg.strategy, k=parse_k_policy(cfg.k_policy))
    b.config, b.hierarchy = cfg, hierarchy
    _save_bundle(b, args.out)
    for k, score in sorted(hierarchy.assignment.silhouette_by_k.items()):
        print(f"silhouette k={k}: {score:.4f}")
    print(f"K*={hierarchy.k}")
    print("tree heights: " + " ".join(str(h) for h in hierarchy.tree_heights()))
    print(f"nodes={len(hierarchy.nodes)}")
    return 0


def _evaluate(b: ExpertBundle, cfg, method: str, hierarchy) -> StreamResult:
    return evaluate_trained(b.world, _trained(b), method, cfg, hierarchy=hierarchy)


def _summary(method: str, cfg, res: StreamResult) -> list:
    return [
        f"s{cfg.seed}", method, res.cost.k, cfg.tau, cfg.tau_e, res.abar, res.a_t,
        res.cost.mean_depth, res.cost.theoretical_speedup, res.cost.mean_evaluations,
    ]


def _print_summary(res: StreamResult) -> None:
    c = res.cost
    depth = "nan" if math.isnan(c.mean_depth) else f"{c.mean_depth:.3f}"
    print(f"ABAR={res.abar:.4f} AT={res.a_t:.4f} DEPTH={depth} SPEEDUP={c.theoretical_speedup:.3f} EVALS={c.mean_evaluations:.3f}")


def _write_per_task(path, res: StreamResult) -> None:
    rows = []
    running = []
    for i in range(len(res.accuracy)):
        acc = float(np.mean(res.accuracy[i, : i + 1]))
        running.append(acc)
        rows.append([i, acc, float(np.mean(running)), "", "", ""])
    rows.append(["final", "", res.abar, res.a_t, res.cost.mean_depth, res.cost.theoretical_speedup])
    _write_csv(path, ["task_idx", "acc_after_task", "abar_running", "a_t", "mean_depth", "theo_speedup"], rows)


def _write_traces(path, res: StreamResult, class_ids) -> None:
    k = max((len(t.paths) for t in res.traces), default=0)
    header = ["sample_id", "pred", "true", "n_eval"] + [f"depth_tree_{i + 1}" for i in range(k)]
    rows = []
    for i, (trace, label) in enumerate(zip(res.traces, res.labels)):
        rows.append([i, int(class_ids[trace.prediction]), int(label), trace.evaluations, *trace.path_len_per_tree])
    _write_csv(path, header, rows)


def _run_eval(args, method: str) -> int:
    b = _load_bundle(args.bundle)
    cfg = _config(args, base=b.config)
    if method == "saef" and b.hierarchy is None:
        raise RuntimeError("bundle has no hierarchy; run `saef build` first")
    hierarchy = b.hierarchy if method == "saef" and _same_structure(cfg, b.config) else None
    res = _evaluate(b, cfg, method, hierarchy)
    _write_csv(args.out, EVAL_HEADER, [_summary(method, cfg, res)])
    if getattr(args, "per_task", None):
        _write_per_task(args.per_task, res)
    if getattr(args, "traces", None):
        _write_traces(args.traces, res, sorted(b.class_stats.class_ids))
    _print_summary(res)
    return 0


def _same_structure(a, b) -> bool:
    return (a.k_policy, a.strategy, a.seed) == (b.k_policy, b.strategy, b.seed)


def cmd_evaluate(args) -> int:
    return _run_eval(args, args.method)


def cmd_baseline_flat(args) -> int:
    return _run_eval(args, "flat")


def cmd_sweep(args) -> int:
    b = _load_bundle(args.bundle)
    cfg = _config(args, base=b.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    rows = []
    for value in values:
        if args.param in ("tau", "tau_e"):
            try:
                run_cfg = cfg.replace(**{args.param: float(value)})
            except ValueError as e:
                raise UsageError(str(e)) from None
            if b.hierarchy is None:
                raise RuntimeError("bundle has no hierarchy; run `saef build` first")
            hierarchy = b.hierarchy if _same_structure(cfg, b.config) else None
        else:
            k = len(b.tasks) if value == "T" else value
            try:
                run_cfg = cfg.replace(k_policy=str(parse_k_policy(k)))
            except ValueError as e:
                raise UsageError(str(e)) from None
            hierarchy = None
        res = _evaluate(b, run_cfg, "saef", hierarchy)
        row = _summary("saef", run_cfg, res)
        row[0] = f"{args.param}={value}"
        rows.append(row)
        print(f"{args.param}={value}: ", end="")
        _print_summary(res)
    _write_csv(args.out, EVAL_HEADER, rows)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, bundle_in=True):
    if bundle_in:
        p.add_argument("bundle", help="input bundle (JSON)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--out", required=True, help="output path")


def _add_inference(p):
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-e", dest="tau_e", type=float)
    p.add_argument("--k", help="auto | flat | INT")
    p.add_argument("--strategy", choices=["balanced", "unlimited", "unlimited_depth"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saef", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a bundle with a synthetic world and its tasks")
    _add_common(p, bundle_in=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one adapter per task")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build", help="cluster tasks and build the expert forest")
    _add_common(p)
    _add_inference(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("evaluate", help="run the stream protocol and write metrics")
    _add_common(p)
    _add_inference(p)
    p.add_argument("--method", choices=["saef", "flat"], default="saef")
    p.add_argument("--per-task", dest="per_task", help="per-task metrics CSV")
    p.add_argument("--traces", help="per-sample trace CSV for the final step")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline-flat", help="evaluate the max-logit full ensemble")
    _add_common(p)
    p.add_argument("--per-task", dest="per_task")
    p.add_argument("--traces")
    p.set_defaults(func=cmd_baseline_flat)

    p = sub.add_parser("sweep", help="evaluate over a grid of tau, tau_e or K")
    _add_common(p)
    _add_inference(p)
    p.add_argument("--param", required=True, choices=["tau", "tau_e", "tau-e", "k"])
    p.add_argument("--values", required=True, help="comma-separated; for k, T means one tree per task")
    p.set_defaults(func=cmd_sweep)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SAEF_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "param", None) == "tau-e":
        args.param = "tau_e"
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"saef: error: {e}", file=sys.stderr)
        return 2
    except (RuntimeError, BundleError, OSError, ValueError) as e:
        print(f"saef: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
