"""Numeric primitives shared by every stage: softmax, entropy, cosine similarity.

Parameter vectors are plain float64 numpy arrays. Entropies are in nats.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


class DegeneratePrototypeError(ValueError):
    pass


def as_param_vector(values) -> np.ndarray:
    """Validate and return a flat float64 parameter vector."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("parameter vector must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vector contains non-finite entries")
    return arr


@dataclass(frozen=True)
class VisualPrototype:
    """Mean feature vector of the tasks under a node, with the number of leaf tasks it covers."""

    values: np.ndarray
    leaf_count: int = 1

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).ravel()
        if self.leaf_count < 1:
            raise ValueError("leaf_count must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("prototype contains non-finite entries")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class PredictiveDistribution:
    probs: np.ndarray
    entropy: float

    @property
    def label(self) -> int:
        return int(np.argmax(self.probs))


def shannon_entropy(dist) -> float:
    """Natural-log entropy with the 0 * log 0 = 0 convention."""
    p = np.asarray(dist, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("probability vector has negative entries")
    nz = p[p > 0]
    h = float(-np.sum(nz * np.log(nz)))
    # rounding can push a one-hot slightly below zero
    return max(h, 0.0)


def softmax(logits) -> PredictiveDistribution:
    s = np.asarray(logits, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("empty logit vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("logits must be finite")
    e = np.exp(s - s.max())
    probs = e / e.sum()
    return PredictiveDistribution(probs=probs, entropy=shannon_entropy(probs))


def softmax_rows(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax of a (n, C) logit matrix; returns (probs, entropies)."""
    s = np.asarray(logits, dtype=np.float64)
    e = np.exp(s - s.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return probs, np.maximum(-terms.sum(axis=1), 0.0)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegeneratePrototypeError("degenerate prototype")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def child_rng(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named sub-stream of a root seed.

    Names may be strings or integers; strings are hashed with crc32 so the
    stream is stable across interpreter runs.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        key.append(zlib.crc32(name.encode()) if isinstance(name, str) else int(name))
    return np.random.default_rng(np.random.SeedSequence(key))
