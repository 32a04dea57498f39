"""Entropy-guided adaptive inference over a built expert forest.

Each tree is searched from its root toward the child with lower predictive
entropy, stopping at a leaf or as soon as the current node's entropy reaches
``tau_e``. The global root and every node on every path are fused
with weights ``softmax(-H / tau)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from saef.core import PredictiveDistribution, shannon_entropy, softmax
from saef.forest import ExpertNode, ForestHierarchy


class ExpertEvaluator:
    """Maps (expert node, sample) to logits over every class seen so far.

    Subclasses may override :meth:`distribution` to serve precomputed
    softmax outputs; the search only ever asks for distributions.
    """

    def __init__(self, logits_fn: Callable[[ExpertNode, Any], np.ndarray] | None = None):
        self._logits_fn = logits_fn

    def logits(self, node: ExpertNode, sample) -> np.ndarray:
        if self._logits_fn is None:
            raise NotImplementedError
        return self._logits_fn(node, sample)

    def distribution(self, node: ExpertNode, sample) -> PredictiveDistribution:
        return softmax(self.logits(node, sample))


class SampleCache:
    """Per-sample memo so each expert runs at most once for a given input."""

    def __init__(self, evaluator: ExpertEvaluator, sample):
        self.evaluator = evaluator
        self.sample = sample
        self._dists: dict[int, PredictiveDistribution] = {}

    def __call__(self, node: ExpertNode) -> PredictiveDistribution:
        dist = self._dists.get(node.id)
        if dist is None:
            dist = self.evaluator.distribution(node, self.sample)
            self._dists[node.id] = dist
        return dist

    @property
    def evaluations(self) -> int:
        return len(self._dists)


@dataclass(frozen=True)
class InferenceTrace:
    activated: tuple[int, ...]
    paths: tuple[tuple[int, ...], ...]
    weights: tuple[float, ...]
    fused: PredictiveDistribution
    evaluations: int
    entropies: tuple[float, ...] = ()

    @property
    def prediction(self) -> int:
        return self.fused.label

    @property
    def path_len_per_tree(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.paths)

    def weight_of(self, node_id: int) -> float:
        return self.weights[self.activated.index(node_id)]


@dataclass(frozen=True)
class CostReport:
    n_experts: int
    k: int
    mean_depth: float
    mean_evaluations: float
    theoretical_speedup: float


def theoretical_speedup(n_experts: int, k: int, mean_depth: float) -> float:
    """Query-count ratio of a flat ensemble to the forest search: N / (1 + K * depth)."""
    return n_experts / (1.0 + k * mean_depth)


def find_path(root: ExpertNode, sample, evaluator: ExpertEvaluator, tau_e: float = 0.0, cache=None) -> list[int]:
    """Descend one tree by lower child entropy; returns visited node ids from the root.

    Stops at a leaf, or early once the current node's entropy is at or
    below a positive ``tau_e`` (so ``tau_e = ln C`` always stops at the
    root; ``tau_e = 0`` never exits early). Equal child entropies go left.
    """
    if cache is None:
        cache = SampleCache(evaluator, sample)
    path = []
    node = root
    while True:
        path.append(node.id)
        h = cache(node).entropy
        if node.is_leaf or (tau_e > 0 and h <= tau_e):
            return path
        left, right = node.children
        node = left if cache(left).entropy <= cache(right).entropy else right


def fusion_weights(entropies, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError("tau must be positive")
    a = -np.asarray(entropies, dtype=np.float64) / tau
    e = np.exp(a - a.max())
    return e / e.sum()


def adaptive_infer(
    hierarchy: ForestHierarchy,
    sample,
    evaluator: ExpertEvaluator,
    tau: float = 1.0,
    tau_e: float = 0.0,
) -> InferenceTrace:
    if not hierarchy.roots:
        raise ValueError("empty hierarchy")
    cache = SampleCache(evaluator, sample)
    global_node = hierarchy.nodes[hierarchy.global_root]
    cache(global_node)
    paths = tuple(tuple(find_path(root, sample, evaluator, tau_e, cache)) for root in hierarchy.root_nodes())
    activated = [global_node.id]
    for path in paths:
        for node_id in path:
            if node_id not in activated:
                activated.append(node_id)
    dists = [cache(hierarchy.nodes[i]) for i in activated]
    entropies = np.array([d.entropy for d in dists])
    weights = fusion_weights(entropies, tau)
    fused = weights @ np.stack([d.probs for d in dists])
    fused = fused / fused.sum()
    return InferenceTrace(
        activated=tuple(activated),
        paths=paths,
        weights=tuple(float(w) for w in weights),
        fused=_as_distribution(fused),
        evaluations=cache.evaluations,
        entropies=tuple(float(h) for h in entropies),
    )


def _as_distribution(probs: np.ndarray) -> PredictiveDistribution:
    """Wrap an already-normalized probability vector."""
    return PredictiveDistribution(probs=probs, entropy=shannon_entropy(probs))


def flat_ensemble_infer(experts, sample, evaluator: ExpertEvaluator) -> InferenceTrace:
    """Query every task expert and predict the class holding the single largest logit.

    The winning expert gets weight 1 and its distribution is reported as
    the fused output.
    """
    experts = list(experts)
    if not experts:
        raise ValueError("no experts")
    best_idx, best_logit = 0, -np.inf
    all_logits = []
    for i, node in enumerate(experts):
        s = np.asarray(evaluator.logits(node, sample), dtype=np.float64)
        all_logits.append(s)
        if s.max() > best_logit:
            best_idx, best_logit = i, s.max()
    dists = [softmax(s) for s in all_logits]
    weights = tuple(1.0 if i == best_idx else 0.0 for i in range(len(experts)))
    return InferenceTrace(
        activated=tuple(n.id for n in experts),
        paths=(),
        weights=weights,
        fused=dists[best_idx],
        evaluations=len(experts),
        entropies=tuple(d.entropy for d in dists),
    )


def cost_report(traces, n_experts: int, k: int) -> CostReport:
    traces = list(traces)
    if not traces:
        raise ValueError("no traces")
    lengths = [length for t in traces for length in t.path_len_per_tree]
    mean_depth = float(np.mean(lengths)) if lengths else float("nan")
    mean_evals = float(np.mean([t.evaluations for t in traces]))
    return CostReport(
        n_experts=n_experts,
        k=k,
        mean_depth=mean_depth,
        mean_evaluations=mean_evals,
        theoretical_speedup=theoretical_speedup(n_experts, k, mean_depth) if lengths else 1.0,
    )
