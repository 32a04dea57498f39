"""Expert forest construction: balanced sign-max merge trees and a global root.

Each conceptual cluster becomes one full binary tree built bottom-up by
merging the most visually similar pair of nodes. Tree roots are then fused
into a single global expert that is always consulted at inference.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from saef.clustering import ClusterAssignment, find_optimal_k, kmeans
from saef.core import VisualPrototype, as_param_vector, cosine_similarity

log = logging.getLogger(__name__)

STRATEGIES = ("balanced", "unlimited_depth")


@dataclass(frozen=True, eq=False)
class TaskRecord:
    """One learned task: its adapter parameters and both prototypes."""

    task_id: int
    class_ids: tuple[int, ...]
    params: np.ndarray
    semantic_prototype: np.ndarray
    visual_prototype: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "params", as_param_vector(self.params))
        object.__setattr__(self, "class_ids", tuple(int(c) for c in self.class_ids))
        for name in ("semantic_prototype", "visual_prototype"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())


@dataclass(frozen=True, eq=False)
class ExpertNode:
    id: int
    params: np.ndarray
    prototype: VisualPrototype | None
    children: tuple["ExpertNode", ...] = ()
    height: int = 0
    source_tasks: frozenset = frozenset()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def child_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.children)

    def walk(self):
        """Pre-order iteration over the subtree."""
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True, eq=False)
class ForestHierarchy:
    assignment: ClusterAssignment
    roots: tuple[int, ...]
    global_root: int
    nodes: dict[int, ExpertNode] = field(repr=False)
    strategy: str = "balanced"

    @property
    def k(self) -> int:
        return len(self.roots)

    @property
    def n_leaves(self) -> int:
        return len(self.nodes[self.global_root].source_tasks)

    def root_nodes(self) -> list[ExpertNode]:
        return [self.nodes[r] for r in self.roots]

    def tree_heights(self) -> list[int]:
        return [self.nodes[r].height for r in self.roots]


def sign_max_merge(a, b) -> np.ndarray:
    """Element-wise ``sign(a + b) * max(|a|, |b|)``; exactly cancelling coordinates become 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return np.sign(a + b) * np.maximum(np.abs(a), np.abs(b))


def global_root_merge(roots) -> np.ndarray:
    """Fuse K tree roots: sign of the sum, magnitude of the largest entry."""
    roots = [np.asarray(r, dtype=np.float64) for r in roots]
    if not roots:
        raise ValueError("no roots to merge")
    if len(roots) == 1:
        return roots[0].copy()
    if len({r.shape for r in roots}) != 1:
        raise ValueError("roots have different lengths")
    stack = np.stack(roots)
    # pairwise summation order so K=2 matches sign_max_merge bit-for-bit
    total = stack[0] + stack[1]
    for r in stack[2:]:
        total = total + r
    return np.sign(total) * np.abs(stack).max(axis=0)


def merge_prototypes(a: VisualPrototype, b: VisualPrototype) -> VisualPrototype:
    """Leaf-count weighted mean of two prototypes."""
    if a.values.shape != b.values.shape:
        raise ValueError("prototype dimension mismatch")
    n = a.leaf_count + b.leaf_count
    values = (a.leaf_count * a.values + b.leaf_count * b.values) / n
    return VisualPrototype(values, n)


def _leaf(node_id: int, task: TaskRecord) -> ExpertNode:
    return ExpertNode(
        id=node_id,
        params=task.params,
        prototype=VisualPrototype(task.visual_prototype, 1),
        height=0,
        source_tasks=frozenset([task.task_id]),
    )


def _most_similar_pair(candidates: list[ExpertNode]) -> tuple[ExpertNode, ExpertNode]:
    best, best_sim = None, -np.inf
    ordered = sorted(candidates, key=lambda n: n.id)
    for a, b in itertools.combinations(ordered, 2):
        sim = cosine_similarity(a.prototype.values, b.prototype.values)
        if sim > best_sim:
            best, best_sim = (a, b), sim
    return best


def build_tree(
    cluster_tasks,
    strategy: str = "balanced",
    *,
    leaf_ids=None,
    id_counter=None,
    events: list | None = None,
) -> ExpertNode:
    """Merge a cluster's task experts bottom-up into one binary tree.

    ``balanced`` only pairs nodes sitting at the current lowest level; a
    node left alone on its level is promoted to the next one unmerged.
    ``unlimited_depth`` always merges the globally most similar pair.

    ``leaf_ids`` defaults to 0..n-1 and ``id_counter`` to ids after the
    largest leaf id. When ``events`` is a list, ``("merge", level, i, j, p)``
    and ``("promote", level, i)`` tuples are appended to it.
    """
    tasks = list(cluster_tasks)
    if not tasks:
        raise ValueError("cannot build a tree from an empty cluster")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if len({t.params.shape for t in tasks}) != 1:
        raise ValueError("task parameter vectors differ in length")
    if leaf_ids is None:
        leaf_ids = range(len(tasks))
    leaf_ids = list(leaf_ids)
    if id_counter is None:
        id_counter = itertools.count(max(leaf_ids) + 1)

    working = [_leaf(i, t) for i, t in zip(leaf_ids, tasks)]
    level = {n.id: 0 for n in working}
    while len(working) > 1:
        if strategy == "balanced":
            lowest = min(level[n.id] for n in working)
            candidates = [n for n in working if level[n.id] == lowest]
            if len(candidates) == 1:
                level[candidates[0].id] += 1
                if events is not None:
                    events.append(("promote", lowest, candidates[0].id))
                continue
        else:
            lowest = None
            candidates = working
        left, right = _most_similar_pair(candidates)
        parent = ExpertNode(
            id=next(id_counter),
            params=sign_max_merge(left.params, right.params),
            prototype=merge_prototypes(left.prototype, right.prototype),
            children=(left, right),
            height=1 + max(left.height, right.height),
            source_tasks=left.source_tasks | right.source_tasks,
        )
        if events is not None:
            events.append(("merge", lowest, left.id, right.id, parent.id))
        working = [n for n in working if n is not left and n is not right] + [parent]
        level[parent.id] = (lowest if lowest is not None else 0) + 1
    return working[0]


def resolve_assignment(points, k="auto", k_range=None, seed: int = 0) -> ClusterAssignment:
    """Cluster tasks per a K policy: ``"auto"``, ``"flat"`` (K = T) or an integer."""
    n = len(points)
    if k in (None, "auto"):
        return find_optimal_k(points, k_range, seed=seed)
    if k == "flat":
        return ClusterAssignment.singletons(n)
    k = int(k)
    if k == 1:
        return ClusterAssignment.single(n)
    if k == n:
        return ClusterAssignment.singletons(n)
    return kmeans(points, k, seed=seed)


def build_hierarchy(
    tasks,
    k_range=None,
    seed: int = 0,
    strategy: str = "balanced",
    k="auto",
) -> ForestHierarchy:
    """Cluster tasks, build one tree per cluster, and fuse the roots.

    Leaves take ids 0..T-1 in task order; internal nodes are numbered after
    them, cluster by cluster, and the global root comes last. With a single
    tree, the global root is that tree's root.
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks")
    assignment = resolve_assignment([t.semantic_prototype for t in tasks], k, k_range, seed)
    log.info("clustering: K=%d sizes=%s", assignment.k, [len(c) for c in assignment.clusters])
    counter = itertools.count(len(tasks))
    nodes: dict[int, ExpertNode] = {}
    roots = []
    for members in assignment.clusters:
        root = build_tree([tasks[i] for i in members], strategy, leaf_ids=members, id_counter=counter)
        roots.append(root)
        for node in root.walk():
            nodes[node.id] = node
    if len(roots) == 1:
        global_id = roots[0].id
    else:
        global_node = ExpertNode(
            id=next(counter),
            params=global_root_merge([r.params for r in roots]),
            prototype=None,
            height=1 + max(r.height for r in roots),
            source_tasks=frozenset().union(*(r.source_tasks for r in roots)),
        )
        nodes[global_node.id] = global_node
        global_id = global_node.id
    return ForestHierarchy(
        assignment=assignment,
        roots=tuple(r.id for r in roots),
        global_root=global_id,
        nodes=nodes,
        strategy=strategy,
    )
