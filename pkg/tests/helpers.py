"""Test-side oracles written with the math module, independent of the package internals."""

import math
import random

import numpy as np

from saef.bundle import ExpertBundle, TaskEntry
from saef.clustering import ClusterAssignment
from saef.config import RunConfig
from saef.forest import ExpertNode, ForestHierarchy, build_hierarchy
from saef.inference import ExpertEvaluator
from saef.simulator import ClassStats, generate_world


def ref_softmax(logits):
    m = max(logits)
    e = [math.exp(x - m) for x in logits]
    s = sum(e)
    return [v / s for v in e]


def ref_entropy(p):
    return -sum(q * math.log(q) for q in p if q > 0)


def ref_silhouette(points, labels):
    n = len(points)
    dist = [[math.dist(points[i], points[j]) for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            continue
        a = sum(dist[i][j] for j in own) / len(own)
        b = min(
            sum(dist[i][j] for j in range(n) if labels[j] == c) / labels.count(c)
            for c in set(labels) if c != labels[i]
        )
        total += (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return total / n


def random_forest(rnd: random.Random, max_nodes=15, n_classes=None):
    """Random full binary trees plus a global root, with a random logit table.

    Returns ``(hierarchy, children, table)`` where ``children`` maps node id
    to its (left, right) ids and ``table[node_id]`` is a list of logits.
    """
    n_classes = n_classes or rnd.randint(2, 6)
    next_id = [0]
    children = {}

    def grow(budget):
        node_id = next_id[0]
        next_id[0] += 1
        if budget >= 3 and rnd.random() < 0.7:
            left_budget = rnd.randrange(1, budget - 1, 2) if budget > 3 else 1
            left = grow(left_budget)
            right = grow(budget - 1 - left_budget)
            children[node_id] = (left.id, right.id)
            kids = (left, right)
        else:
            kids = ()
        return ExpertNode(
            id=node_id, params=np.zeros(1), prototype=None, children=kids,
            height=0 if not kids else 1 + max(k.height for k in kids),
        )

    while True:
        k = rnd.randint(1, 4)
        budget = max_nodes - (1 if k > 1 else 0)
        sizes = [1] * k
        spare = budget - k
        for _ in range(spare // 2):
            i = rnd.randrange(k)
            sizes[i] += 2
        if sum(sizes) <= budget:
            break
    next_id[0] = 0
    children.clear()
    roots = [grow(s) for s in sizes]
    nodes = {n.id: n for r in roots for n in r.walk()}
    if k > 1:
        g = ExpertNode(id=next_id[0], params=np.zeros(1), prototype=None, height=1 + max(r.height for r in roots))
        nodes[g.id] = g
        global_id = g.id
    else:
        global_id = roots[0].id
    hierarchy = ForestHierarchy(
        assignment=ClusterAssignment.from_labels(range(k)),
        roots=tuple(r.id for r in roots),
        global_root=global_id,
        nodes=nodes,
    )
    scale = rnd.choice([0.5, 2.0, 8.0])
    table = {i: [rnd.gauss(0, scale) for _ in range(n_classes)] for i in nodes}
    # occasional exact ties between siblings exercise the left-preference rule
    for l, r in children.values():
        if rnd.random() < 0.15:
            table[r] = list(table[l])
    return hierarchy, children, table


def table_evaluator(table):
    return ExpertEvaluator(lambda node, sample: np.asarray(table[node.id], dtype=np.float64))


def ref_path(children, root, table, tau_e):
    ent = {i: ref_entropy(ref_softmax(v)) for i, v in table.items()}
    path = [root]
    node = root
    while node in children and not (tau_e > 0 and ent[node] <= tau_e):
        left, right = children[node]
        node = left if ent[left] <= ent[right] else right
        path.append(node)
    return path


def ref_infer(hierarchy, children, table, tau, tau_e):
    paths = [ref_path(children, r, table, tau_e) for r in hierarchy.roots]
    activated = [hierarchy.global_root]
    for p in paths:
        for i in p:
            if i not in activated:
                activated.append(i)
    probs = {i: ref_softmax(table[i]) for i in activated}
    ent = [ref_entropy(probs[i]) for i in activated]
    raw = [math.exp(-h / tau) for h in ent]
    total = sum(raw)
    weights = [w / total for w in raw]
    n_classes = len(table[activated[0]])
    fused = [sum(w * probs[i][c] for w, i in zip(weights, activated)) for c in range(n_classes)]
    return paths, activated, weights, fused


def ref_speedup(n, k, d):
    return n / (1 + k * d)


def random_bundle(seed: int, with_hierarchy=True) -> ExpertBundle:
    rng = np.random.default_rng(seed)
    d, r = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    T = int(rng.integers(1, 7))
    cfg = RunConfig(seed=seed, T=T, classes_per_task=2, n_concepts=1, d_in=3, d=d, r=r, samples_per_class=10)
    world = generate_world(1, 2 * T, T, 2, 3, seed=seed, d_s=4)
    scale = 10.0 ** rng.integers(-8, 8)
    tasks = [
        TaskEntry(
            task_id=t,
            class_ids=world.tasks[t],
            semantic_prototype=world.task_semantic[t],
            w_down=rng.normal(size=(d, r)) * scale,
            w_up=rng.normal(size=(r, d)) / 3.0,
            visual_prototype=rng.normal(size=d) + 0.1,
        )
        for t in range(T)
    ]
    stats = ClassStats()
    for c in range(world.n_classes):
        stats.means[c] = rng.normal(size=d)
        stats.variances[c] = rng.uniform(0, 2, size=d)
        stats.counts[c] = int(rng.integers(1, 100))
    b = ExpertBundle(config=cfg, world=world, tasks=tasks, class_stats=stats,
                     train_log=[{"task": 0, "cls_first": 1.0 / 3, "cls_last": 0.1, "orth_last": 0.0}])
    if with_hierarchy:
        b.hierarchy = build_hierarchy(b.task_records(), seed=seed)
    return b
