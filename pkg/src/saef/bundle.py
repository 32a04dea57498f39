"""Expert-bundle JSON format.

One file carries the run configuration, the synthetic world, per-task
adapters and prototypes, stored class statistics and (optionally) a built
hierarchy. Floats are written with Python's shortest round-trip repr, so a
parse/serialize cycle is bit-exact.

Layout (version 1)::

    {"version": 1, "d": .., "d_in": .., "r": .., "d_s": ..,
     "config": {...RunConfig fields...},
     "world": {...} | null,
     "tasks": [{"task_id", "class_ids", "W_down", "W_up",
                "semantic_prototype", "visual_prototype"}, ...],
     "class_stats": [{"class_id", "mean", "var", "count"}, ...],
     "hierarchy": {"strategy", "k", "labels", "silhouette_by_k",
                   "roots", "global_root",
                   "nodes": [{"id", "params", "prototype", "leaf_count",
                              "children", "height", "source_tasks"}, ...]} | null,
     "train_log": [{"task", "cls_first", "cls_last", "orth_last"}, ...]}

Matrices are nested row-major lists. ``W_down``/``W_up`` and
``visual_prototype`` are null until training has run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from saef.clustering import ClusterAssignment
from saef.config import RunConfig
from saef.core import VisualPrototype
from saef.forest import ExpertNode, ForestHierarchy, TaskRecord
from saef.simulator import Adapter, ClassStats, SyntheticWorld

VERSION = 1


class BundleError(ValueError):
    pass


@dataclass
class TaskEntry:
    task_id: int
    class_ids: tuple[int, ...]
    semantic_prototype: np.ndarray
    w_down: np.ndarray | None = None
    w_up: np.ndarray | None = None
    visual_prototype: np.ndarray | None = None

    @property
    def trained(self) -> bool:
        return self.w_down is not None and self.w_up is not None and self.visual_prototype is not None

    def adapter(self) -> Adapter:
        if not self.trained:
            raise BundleError(f"task {self.task_id} has no trained adapter")
        return Adapter(self.w_down, self.w_up)

    def record(self) -> TaskRecord:
        return TaskRecord(
            task_id=self.task_id,
            class_ids=self.class_ids,
            params=self.adapter().flatten(),
            semantic_prototype=self.semantic_prototype,
            visual_prototype=self.visual_prototype,
        )


@dataclass
class ExpertBundle:
    config: RunConfig
    world: SyntheticWorld | None = None
    tasks: list[TaskEntry] = field(default_factory=list)
    class_stats: ClassStats | None = None
    hierarchy: ForestHierarchy | None = None
    train_log: list[dict] = field(default_factory=list)
    version: int = VERSION

    @property
    def trained(self) -> bool:
        return bool(self.tasks) and all(t.trained for t in self.tasks)

    def task_records(self) -> list[TaskRecord]:
        return [t.record() for t in self.tasks]

    def adapters(self) -> list[Adapter]:
        return [t.adapter() for t in self.tasks]


# ---------------------------------------------------------------------------
# encoding


def _arr(a):
    return None if a is None else np.asarray(a, dtype=np.float64).tolist()


def _world_to_dict(w: SyntheticWorld) -> dict:
    return {
        "seed": int(w.seed),
        "d_in": int(w.d_in),
        "concept_centers": _arr(w.concept_centers),
        "class_concept": [int(c) for c in w.class_concept],
        "class_means": _arr(w.class_means),
        "class_std": _arr(w.class_std),
        "class_semantic": _arr(w.class_semantic),
        "task_semantic": _arr(w.task_semantic),
        "tasks": [list(t) for t in w.tasks],
        "samples_per_class": int(w.samples_per_class),
        "test_fraction": float(w.test_fraction),
    }


def _hierarchy_to_dict(h: ForestHierarchy) -> dict:
    nodes = []
    for node_id in sorted(h.nodes):
        n = h.nodes[node_id]
        nodes.append({
            "id": n.id,
            "params": _arr(n.params),
            "prototype": None if n.prototype is None else _arr(n.prototype.values),
            "leaf_count": None if n.prototype is None else n.prototype.leaf_count,
            "children": list(n.child_ids),
            "height": n.height,
            "source_tasks": sorted(n.source_tasks),
        })
    return {
        "strategy": h.strategy,
        "k": h.k,
        "labels": list(h.assignment.labels),
        "silhouette_by_k": {str(k): float(v) for k, v in sorted(h.assignment.silhouette_by_k.items())},
        "roots": list(h.roots),
        "global_root": h.global_root,
        "nodes": nodes,
    }


def to_dict(b: ExpertBundle) -> dict:
    cfg = b.config
    d_s = b.world.d_s if b.world is not None else (len(b.tasks[0].semantic_prototype) if b.tasks else 0)
    out = {
        "version": b.version,
        "d": cfg.d,
        "d_in": cfg.d_in,
        "r": cfg.r,
        "d_s": int(d_s),
        "config": cfg.to_dict(),
        "world": None if b.world is None else _world_to_dict(b.world),
        "tasks": [
            {
                "task_id": t.task_id,
                "class_ids": list(t.class_ids),
                "W_down": _arr(t.w_down),
                "W_up": _arr(t.w_up),
                "semantic_prototype": _arr(t.semantic_prototype),
                "visual_prototype": _arr(t.visual_prototype),
            }
            for t in b.tasks
        ],
        "class_stats": [] if b.class_stats is None else [
            {
                "class_id": c,
                "mean": _arr(b.class_stats.means[c]),
                "var": _arr(b.class_stats.variances[c]),
                "count": int(b.class_stats.counts[c]),
            }
            for c in b.class_stats.class_ids
        ],
        "hierarchy": None if b.hierarchy is None else _hierarchy_to_dict(b.hierarchy),
        "train_log": b.train_log,
    }
    return out


def dumps(b: ExpertBundle) -> str:
    return json.dumps(to_dict(b), separators=(",", ":"), allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# decoding


def _np(a, shape=None, what="array"):
    if a is None:
        return None
    arr = np.asarray(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise BundleError(f"{what}: expected shape {shape}, got {arr.shape}")
    return arr


def _world_from_dict(w: dict) -> SyntheticWorld:
    return SyntheticWorld(
        seed=int(w["seed"]),
        d_in=int(w["d_in"]),
        concept_centers=_np(w["concept_centers"]),
        class_concept=np.asarray(w["class_concept"], dtype=np.int64),
        class_means=_np(w["class_means"]),
        class_std=_np(w["class_std"]),
        class_semantic=_np(w["class_semantic"]),
        task_semantic=_np(w["task_semantic"]),
        tasks=tuple(tuple(int(c) for c in t) for t in w["tasks"]),
        samples_per_class=int(w["samples_per_class"]),
        test_fraction=float(w["test_fraction"]),
    )


def _hierarchy_from_dict(h: dict, n_params: int) -> ForestHierarchy:
    raw = {int(n["id"]): n for n in h["nodes"]}
    built: dict[int, ExpertNode] = {}
    for n in sorted(raw.values(), key=lambda n: (n["height"], n["id"])):
        children = tuple(built[c] for c in n["children"])
        if len(children) not in (0, 2):
            raise BundleError(f"node {n['id']} has {len(children)} children")
        proto = None if n["prototype"] is None else VisualPrototype(_np(n["prototype"]), int(n["leaf_count"]))
        built[n["id"]] = ExpertNode(
            id=int(n["id"]),
            params=_np(n["params"], (n_params,), f"node {n['id']} params"),
            prototype=proto,
            children=children,
            height=int(n["height"]),
            source_tasks=frozenset(int(t) for t in n["source_tasks"]),
        )
    assignment = ClusterAssignment.from_labels(
        h["labels"], silhouette_by_k={int(k): float(v) for k, v in h["silhouette_by_k"].items()}
    )
    if assignment.k != int(h["k"]) or len(h["roots"]) != assignment.k:
        raise BundleError("hierarchy cluster count is inconsistent")
    return ForestHierarchy(
        assignment=assignment,
        roots=tuple(int(r) for r in h["roots"]),
        global_root=int(h["global_root"]),
        nodes=built,
        strategy=h["strategy"],
    )


def from_dict(data: dict) -> ExpertBundle:
    if data.get("version") != VERSION:
        raise BundleError(f"unsupported bundle version {data.get('version')!r}")
    config = RunConfig(**data["config"])
    d, r, d_s = int(data["d"]), int(data["r"]), int(data["d_s"])
    if (d, r, int(data["d_in"])) != (config.d, config.r, config.d_in):
        raise BundleError("declared dimensions disagree with the config")
    tasks = []
    for t in data["tasks"]:
        tasks.append(TaskEntry(
            task_id=int(t["task_id"]),
            class_ids=tuple(int(c) for c in t["class_ids"]),
            semantic_prototype=_np(t["semantic_prototype"], (d_s,), "semantic_prototype"),
            w_down=_np(t["W_down"], (d, r), "W_down"),
            w_up=_np(t["W_up"], (r, d), "W_up"),
            visual_prototype=_np(t["visual_prototype"], (d,), "visual_prototype"),
        ))
    stats = None
    if data["class_stats"]:
        stats = ClassStats()
        for s in data["class_stats"]:
            c = int(s["class_id"])
            stats.means[c] = _np(s["mean"], (d,), "class mean")
            stats.variances[c] = _np(s["var"], (d,), "class var")
            stats.counts[c] = int(s["count"])
    hierarchy = None
    if data.get("hierarchy") is not None:
        hierarchy = _hierarchy_from_dict(data["hierarchy"], 2 * d * r)
    return ExpertBundle(
        config=config,
        world=None if data["world"] is None else _world_from_dict(data["world"]),
        tasks=tasks,
        class_stats=stats,
        hierarchy=hierarchy,
        train_log=list(data.get("train_log", [])),
        version=int(data["version"]),
    )


def loads(text: str) -> ExpertBundle:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise BundleError(f"not a bundle: {e}") from None
    try:
        return from_dict(data)
    except KeyError as e:
        raise BundleError(f"bundle is missing field {e}") from None


def save(b: ExpertBundle, path: str | Path) -> None:
    Path(path).write_text(dumps(b))


def load(path: str | Path) -> ExpertBundle:
    return loads(Path(path).read_text())
