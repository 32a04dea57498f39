"""Conceptual clustering of tasks by K-means over semantic prototypes.

The number of clusters is picked by the mean silhouette score. Distances
are Euclidean for both K-means and silhouette.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from saef.core import child_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterAssignment:
    """Partition of task indices into ``k`` non-empty clusters.

    Clusters are canonically ordered by their smallest member, so label 0
    always contains task 0.
    """

    k: int
    labels: tuple[int, ...]
    clusters: tuple[tuple[int, ...], ...]
    silhouette_by_k: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_labels(cls, labels, silhouette_by_k=None) -> "ClusterAssignment":
        labels = [int(x) for x in labels]
        remap: dict[int, int] = {}
        for lab in labels:
            if lab not in remap:
                remap[lab] = len(remap)
        canon = tuple(remap[lab] for lab in labels)
        k = len(remap)
        clusters = tuple(
            tuple(i for i, lab in enumerate(canon) if lab == c) for c in range(k)
        )
        return cls(k=k, labels=canon, clusters=clusters, silhouette_by_k=dict(silhouette_by_k or {}))

    @classmethod
    def single(cls, n: int) -> "ClusterAssignment":
        return cls.from_labels([0] * n)

    @classmethod
    def singletons(cls, n: int) -> "ClusterAssignment":
        return cls.from_labels(range(n))


def _as_points(points) -> np.ndarray:
    x = np.asarray([np.asarray(p, dtype=np.float64).ravel() for p in points])
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("points must be a non-empty list of equal-length vectors")
    return x


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x**2).sum(1)[:, None] - 2 * x @ centers.T + (centers**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a center
            remaining = [i for i in range(n) if i not in idx]
            nxt = int(rng.choice(remaining))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[[nxt]])[:, 0])
    return x[idx].copy()


def within_cluster_ss(points, labels) -> float:
    x = _as_points(points)
    labels = np.asarray(labels)
    return float(
        sum(((x[labels == c] - x[labels == c].mean(0)) ** 2).sum() for c in np.unique(labels))
    )


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100, *, return_history: bool = False):
    """Lloyd's algorithm from a seeded k-means++ start.

    Stops at an assignment fixpoint or after ``max_iters`` rounds. A cluster
    that empties out is reseeded with the point farthest from its current
    center. With ``return_history`` the per-iteration within-cluster sum of
    squares is returned alongside the assignment.
    """
    x = _as_points(points)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    rng = child_rng(seed, "kmeans", k)
    centers = _kmeanspp_init(x, k, rng)
    labels = _sq_dists(x, centers).argmin(1)
    history = []
    for _ in range(max_iters):
        for c in range(k):
            members = labels == c
            if not members.any():
                d2 = _sq_dists(x, centers)[np.arange(n), labels]
                far = int(d2.argmax())
                labels[far] = c
                members = labels == c
            centers[c] = x[members].mean(0)
        history.append(float(_sq_dists(x, centers)[np.arange(n), labels].sum()))
        new_labels = _sq_dists(x, centers).argmin(1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    assignment = ClusterAssignment.from_labels(labels)
    if assignment.k != k:
        # a reseed can leave a donor cluster empty when k is close to n
        assignment = _repair(x, labels, k)
    if return_history:
        return assignment, history
    return assignment


def _repair(x: np.ndarray, labels: np.ndarray, k: int) -> ClusterAssignment:
    labels = labels.copy()
    while len(np.unique(labels)) < k:
        missing = next(c for c in range(k) if not (labels == c).any())
        counts = np.bincount(labels, minlength=k)
        donors = np.flatnonzero(counts[labels] > 1)
        centers = np.array([x[labels == c].mean(0) if counts[c] else x[0] for c in range(k)])
        d2 = ((x[donors] - centers[labels[donors]]) ** 2).sum(1)
        labels[donors[int(d2.argmax())]] = missing
    return ClusterAssignment.from_labels(labels)


def silhouette_score(points, assignment: ClusterAssignment) -> float:
    x = _as_points(points)
    labels = np.asarray(assignment.labels)
    if assignment.k < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    if x.shape[0] < 3:
        raise ValueError("silhouette needs at least 3 points")
    # direct differences: the norm-expansion shortcut loses ~1e-9 here
    dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    scores = np.zeros(x.shape[0])
    for i in range(x.shape[0]):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = dist[i, own].sum() / (own.sum() - 1)
        b = min(dist[i, labels == c].mean() for c in range(assignment.k) if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def default_k_range(n_tasks: int) -> range:
    return range(2, min(n_tasks - 1, 10) + 1)


def find_optimal_k(points, k_range=None, seed: int = 0, max_iters: int = 100) -> ClusterAssignment:
    """Run K-means for every k in ``k_range`` and keep the best silhouette.

    Ties go to the smaller k. Fewer than 3 tasks, or a best silhouette that
    is not positive, yields a single cluster.
    """
    x = _as_points(points)
    n = x.shape[0]
    if n < 3:
        return ClusterAssignment.single(n)
    ks = list(default_k_range(n) if k_range is None else k_range)
    ks = [k for k in ks if 2 <= k <= n - 1]
    if not ks:
        return ClusterAssignment.single(n)
    best, best_score = None, -np.inf
    scores = {}
    for k in ks:
        assignment = kmeans(x, k, seed=seed, max_iters=max_iters)
        score = silhouette_score(x, assignment)
        scores[k] = score
        log.debug("k=%d silhouette=%.4f", k, score)
        if score > best_score:
            best, best_score = assignment, score
    if best_score <= 0:
        return ClusterAssignment.from_labels([0] * n, silhouette_by_k=scores)
    return ClusterAssignment.from_labels(best.labels, silhouette_by_k=scores)
