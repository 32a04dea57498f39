"""Desk-scale class-incremental simulator.

Stands in for the pre-trained-model pipeline: a Gaussian-mixture task
stream grouped into concepts, a frozen random backbone, one bottleneck
adapter per task trained with cross-entropy plus an orthogonality penalty,
prototype classifiers re-aligned from stored class statistics, and the
accuracy-matrix metrics.

Exemplar-free: once a task is learned only its :class:`ClassStats` survive.
Raw samples are served through :class:`DataStream`, which records every
access so tests can check that past training data is never read again.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from saef.config import RunConfig, parse_k_policy
from saef.core import PredictiveDistribution, child_rng, softmax_rows
from saef.forest import ExpertNode, ForestHierarchy, TaskRecord, build_hierarchy
from saef.inference import (
    CostReport,
    ExpertEvaluator,
    InferenceTrace,
    adaptive_infer,
    cost_report,
    flat_ensemble_infer,
)

log = logging.getLogger(__name__)

# frozen-backbone constants for the desk world
FEATURE_GAIN = 10.0
DAMPING = 0.3


# ---------------------------------------------------------------------------
# world


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    seed: int
    d_in: int
    concept_centers: np.ndarray  # (n_concepts, d_in)
    class_concept: np.ndarray  # (C,)
    class_means: np.ndarray  # (C, d_in)
    class_std: np.ndarray  # (C, d_in)
    class_semantic: np.ndarray  # (C, d_s)
    task_semantic: np.ndarray  # (T, d_s)
    tasks: tuple[tuple[int, ...], ...]
    samples_per_class: int = 60
    test_fraction: float = 0.2

    @property
    def n_classes(self) -> int:
        return len(self.class_means)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def d_s(self) -> int:
        return self.class_semantic.shape[1]

    def task_concepts(self) -> list[int]:
        """Majority concept of each task."""
        return [int(np.bincount(self.class_concept[list(cls)]).argmax()) for cls in self.tasks]

    def class_samples(self, class_id: int, split: str) -> np.ndarray:
        """Deterministic train/test samples of one class (80/20 split by default)."""
        rng = child_rng(self.seed, "data", class_id)
        n = self.samples_per_class
        x = self.class_means[class_id] + self.class_std[class_id] * rng.standard_normal((n, self.d_in))
        order = rng.permutation(n)
        n_test = max(1, int(round(n * self.test_fraction)))
        idx = order[n_test:] if split == "train" else order[:n_test]
        if split not in ("train", "test"):
            raise ValueError(f"unknown split {split!r}")
        return x[np.sort(idx)]


def generate_world(
    n_concepts: int,
    classes_per_concept: int,
    tasks: int,
    classes_per_task: int,
    d_in: int,
    seed: int,
    *,
    d_s: int = 16,
    concept_separation: float = 10.0,
    class_spread: float = 3.5,
    class_std: float = 1.0,
    semantic_separation: float = 20.0,
    semantic_class_std: float = 0.5,
    semantic_noise: float = 0.25,
    samples_per_class: int = 60,
) -> SyntheticWorld:
    """Sample a concept-structured class-incremental stream.

    Concept centers sit at pairwise distance ``concept_separation`` (a
    scaled simplex), class means scatter around their concept by
    ``class_spread``. Classes are grouped by concept, cut into tasks, and
    the task order is shuffled. Each class also gets a semantic embedding
    near its concept's semantic center; a task's semantic prototype is the
    mean of its classes' embeddings plus noise.
    """
    if min(n_concepts, classes_per_concept, tasks, classes_per_task, d_in) < 1:
        raise ValueError("all counts must be >= 1")
    if tasks * classes_per_task != n_concepts * classes_per_concept:
        raise ValueError(
            f"tasks*classes_per_task ({tasks * classes_per_task}) != "
            f"n_concepts*classes_per_concept ({n_concepts * classes_per_concept})"
        )
    rng = child_rng(seed, "world")
    concept_centers = _simplex(n_concepts, d_in, concept_separation, rng)
    semantic_centers = _simplex(n_concepts, d_s, semantic_separation, rng)

    n_classes = n_concepts * classes_per_concept
    class_concept = np.repeat(np.arange(n_concepts), classes_per_concept)
    class_means = concept_centers[class_concept] + class_spread * rng.standard_normal((n_classes, d_in)) / math.sqrt(d_in)
    stds = np.full((n_classes, d_in), class_std)
    class_semantic = semantic_centers[class_concept] + semantic_class_std * rng.standard_normal((n_classes, d_s))

    # shuffle class ids within each concept, chunk into tasks, then shuffle task order
    ordered = np.concatenate([rng.permutation(np.flatnonzero(class_concept == c)) for c in range(n_concepts)])
    chunks = [tuple(int(c) for c in ordered[i * classes_per_task:(i + 1) * classes_per_task]) for i in range(tasks)]
    task_order = rng.permutation(tasks)
    task_classes = tuple(chunks[i] for i in task_order)
    task_semantic = np.stack([
        class_semantic[list(cls)].mean(0) + semantic_noise * rng.standard_normal(d_s) for cls in task_classes
    ])
    return SyntheticWorld(
        seed=seed,
        d_in=d_in,
        concept_centers=concept_centers,
        class_concept=class_concept,
        class_means=class_means,
        class_std=stds,
        class_semantic=class_semantic,
        task_semantic=task_semantic,
        tasks=task_classes,
        samples_per_class=samples_per_class,
    )


def _simplex(n: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` points with all pairwise distances equal to ``separation``, randomly rotated."""
    if n == 1:
        return np.zeros((1, dim))
    base = np.eye(n) - 1.0 / n  # centered one-hot vertices, pairwise distance sqrt(2)
    if dim >= n:
        q, _ = np.linalg.qr(rng.standard_normal((dim, n)))
        pts = base @ q.T
    else:
        # not enough room for an exact simplex; random directions instead
        pts = rng.standard_normal((n, dim))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts * separation / math.sqrt(2)


def world_from_config(config: RunConfig) -> SyntheticWorld:
    return generate_world(
        n_concepts=config.n_concepts,
        classes_per_concept=config.classes_per_concept,
        tasks=config.T,
        classes_per_task=config.classes_per_task,
        d_in=config.d_in,
        seed=config.seed,
        samples_per_class=config.samples_per_class,
    )


class DataStream:
    """Serves raw task samples and logs every read as ``(task, split)``."""

    def __init__(self, world: SyntheticWorld):
        self.world = world
        self.accessed: list[tuple[int, str]] = []

    def task_data(self, task: int, split: str) -> tuple[np.ndarray, np.ndarray]:
        self.accessed.append((task, split))
        xs, ys = [], []
        for c in self.world.tasks[task]:
            x = self.world.class_samples(c, split)
            xs.append(x)
            ys.append(np.full(len(x), c))
        return np.concatenate(xs), np.concatenate(ys)


# ---------------------------------------------------------------------------
# backbone and adapters


@dataclass(frozen=True, eq=False)
class Backbone:
    """Frozen random feature extractor.

    ``pre`` is the activation entering the adapted block; ``mlp`` is the
    frozen block the adapter runs in parallel with. The block keeps a random
    half of the feature space and damps the rest by ``damping``, so the
    frozen features under-resolve fine-grained class structure that a
    trained adapter can restore from ``pre``.
    """

    proj: np.ndarray  # (d_in, d)
    block: np.ndarray  # (d, d), symmetric

    @classmethod
    def create(cls, d_in: int, d: int, seed: int, gain: float = FEATURE_GAIN, damping: float = DAMPING) -> "Backbone":
        rng = child_rng(seed, "backbone")
        q, _ = np.linalg.qr(rng.standard_normal((max(d_in, d), max(d_in, d))))
        proj = q[:d_in, :d] * gain
        basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
        scales = np.where(np.arange(d) < d // 2, 1.0, damping)
        return cls(proj=proj, block=(basis * scales) @ basis.T)

    @property
    def d(self) -> int:
        return self.proj.shape[1]

    def pre(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.proj

    def mlp(self, h: np.ndarray) -> np.ndarray:
        return h @ self.block

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.mlp(self.pre(x))


@dataclass(frozen=True, eq=False)
class Adapter:
    """Bottleneck residual: ``ReLU(h @ w_down) @ w_up``.

    Flattened as ``concat(w_down.ravel(), w_up.ravel())`` in row-major order.
    """

    w_down: np.ndarray  # (d, r)
    w_up: np.ndarray  # (r, d)

    def __post_init__(self):
        d, r = self.w_down.shape
        if self.w_up.shape != (r, d):
            raise ValueError(f"w_up shape {self.w_up.shape} does not match w_down {self.w_down.shape}")

    @property
    def d(self) -> int:
        return self.w_down.shape[0]

    @property
    def r(self) -> int:
        return self.w_down.shape[1]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w_down.ravel(), self.w_up.ravel()])

    @classmethod
    def from_flat(cls, theta, d: int, r: int) -> "Adapter":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != 2 * d * r:
            raise ValueError(f"expected {2 * d * r} parameters, got {theta.size}")
        return cls(theta[: d * r].reshape(d, r).copy(), theta[d * r:].reshape(r, d).copy())

    @classmethod
    def zeros(cls, d: int, r: int) -> "Adapter":
        return cls(np.zeros((d, r)), np.zeros((r, d)))

    def residual(self, h: np.ndarray) -> np.ndarray:
        return np.maximum(h @ self.w_down, 0.0) @ self.w_up


def features(backbone: Backbone, adapter: Adapter, h: np.ndarray) -> np.ndarray:
    """Adapted features from pre-adapter activations ``h``."""
    if h.shape[-1] != adapter.d:
        raise ValueError(f"activation dim {h.shape[-1]} != adapter dim {adapter.d}")
    return backbone.mlp(h) + adapter.residual(h)


def adapter_forward(backbone: Backbone, adapter: Adapter, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != backbone.proj.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} != backbone input dim {backbone.proj.shape[0]}")
    return features(backbone, adapter, backbone.pre(x))


# ---------------------------------------------------------------------------
# class statistics and prototype classifiers


@dataclass
class ClassStats:
    """Per-class Gaussian (diagonal) of pre-adapter activations."""

    means: dict[int, np.ndarray] = field(default_factory=dict)
    variances: dict[int, np.ndarray] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def update(self, h: np.ndarray, y: np.ndarray) -> None:
        for c in np.unique(y):
            hc = h[y == c]
            self.means[int(c)] = hc.mean(0)
            self.variances[int(c)] = hc.var(0)
            self.counts[int(c)] = len(hc)

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.means)

    def subset(self, class_ids) -> "ClassStats":
        ids = [int(c) for c in class_ids]
        return ClassStats(
            {c: self.means[c] for c in ids},
            {c: self.variances[c] for c in ids},
            {c: self.counts[c] for c in ids},
        )


@dataclass(frozen=True, eq=False)
class PrototypeClassifier:
    class_ids: tuple[int, ...]
    prototypes: np.ndarray  # (C, d)

    @property
    def weights(self) -> np.ndarray:
        norms = np.linalg.norm(self.prototypes, axis=1, keepdims=True)
        return self.prototypes / np.where(norms == 0, 1.0, norms)

    def logits(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.weights.T


class PseudoSampler:
    """Standard-normal draws per class, reused so every adapter sees the same pseudo-features."""

    def __init__(self, m: int, d: int, seed: int):
        if m < 1:
            raise ValueError("samples_per_class must be >= 1")
        self.m, self.d, self.seed = m, d, seed
        self._noise: dict[int, np.ndarray] = {}

    def noise(self, class_id: int) -> np.ndarray:
        z = self._noise.get(class_id)
        if z is None:
            z = child_rng(self.seed, "align", class_id).standard_normal((self.m, self.d))
            self._noise[class_id] = z
        return z

    def pseudo_activations(self, stats: ClassStats, class_id: int) -> np.ndarray:
        return stats.means[class_id] + np.sqrt(stats.variances[class_id]) * self.noise(class_id)


def align_classifier(
    stats: ClassStats,
    new_adapter: Adapter,
    backbone: Backbone,
    samples_per_class: int = 256,
    seed: int = 0,
    *,
    new_features: dict | None = None,
    sampler: PseudoSampler | None = None,
) -> PrototypeClassifier:
    """Re-estimate old-class prototypes in ``new_adapter``'s feature space.

    Pseudo pre-adapter activations are drawn from each stored Gaussian and
    pushed through the backbone block plus the new adapter. Classes in
    ``new_features`` (class id -> real feature rows) use their real mean.
    """
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    if sampler is None:
        sampler = PseudoSampler(samples_per_class, backbone.d, seed)
    new_features = new_features or {}
    ids = sorted(set(stats.class_ids) - set(new_features))
    if not ids and not new_features:
        raise ValueError("no classes to align")
    protos = {}
    if ids:
        h = np.concatenate([sampler.pseudo_activations(stats, c) for c in ids])
        f = features(backbone, new_adapter, h).reshape(len(ids), sampler.m, -1)
        protos.update(zip(ids, f.mean(1)))
    for c, feats in new_features.items():
        protos[int(c)] = np.asarray(feats).mean(0)
    order = tuple(sorted(protos))
    return PrototypeClassifier(order, np.stack([protos[c] for c in order]))


# ---------------------------------------------------------------------------
# training


def orthogonality_penalty(w_up: np.ndarray, prev_w_ups) -> tuple[float, np.ndarray]:
    """Sum of Frobenius norms of ``w_up @ prev.T`` and its gradient in ``w_up``."""
    loss = 0.0
    grad = np.zeros_like(w_up)
    for prev in prev_w_ups:
        m = w_up @ prev.T
        norm = np.linalg.norm(m)
        loss += norm
        if norm > 0:
            grad += (m / norm) @ prev
    return float(loss), grad


def adapter_loss_and_grad(
    backbone: Backbone,
    adapter: Adapter,
    h: np.ndarray,
    y: np.ndarray,
    head_weights: np.ndarray,
    prev_w_ups=(),
    lam: float = 0.0,
) -> tuple[float, dict, Adapter]:
    """Cross-entropy through a fixed head plus ``lam`` times the orthogonality penalty.

    ``y`` indexes rows of ``head_weights``. Returns ``(total, parts, grad)``
    where ``grad`` is an :class:`Adapter` holding the two gradient matrices.
    """
    n = len(h)
    z = h @ adapter.w_down
    a = np.maximum(z, 0.0)
    f = backbone.mlp(h) + a @ adapter.w_up
    s = f @ head_weights.T
    s = s - s.max(1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(1, keepdims=True))
    cls_loss = float(-logp[np.arange(n), y].mean())
    ds = np.exp(logp)
    ds[np.arange(n), y] -= 1.0
    ds /= n
    df = ds @ head_weights
    g_up = a.T @ df
    dz = (df @ adapter.w_up.T) * (z > 0)
    g_down = h.T @ dz
    orth_loss, g_orth = orthogonality_penalty(adapter.w_up, prev_w_ups)
    g_up = g_up + lam * g_orth
    parts = {"cls": cls_loss, "orth": orth_loss}
    return cls_loss + lam * orth_loss, parts, Adapter(g_down, g_up)


def init_adapter(d: int, r: int, rng: np.random.Generator, scale: float = 1.0) -> Adapter:
    """Random down-projection, zero up-projection: training starts from the frozen backbone."""
    return Adapter(scale * rng.standard_normal((d, r)) / math.sqrt(d), np.zeros((r, d)))


def train_adapter(
    backbone: Backbone,
    h: np.ndarray,
    y: np.ndarray,
    old_stats: ClassStats | None,
    prev_adapters,
    lam: float,
    epochs: int,
    lr: float,
    seed: int,
    *,
    r: int = 16,
    m_pseudo: int = 64,
    cosine_decay: bool = True,
    init: Adapter | None = None,
    history: list | None = None,
) -> Adapter:
    """Full-batch gradient descent on one task's data.

    The head covers every class seen so far and is rebuilt at the start of
    each epoch: new classes from the current adapter's real features, old
    classes by pseudo-feature alignment. Within an epoch the head is held
    fixed. ``history`` (if given) receives one ``{"cls", "orth", "total"}``
    dict per epoch.
    """
    rng = child_rng(seed, "init")
    adapter = init if init is not None else init_adapter(backbone.d, r, rng)
    prev_w_ups = [a.w_up for a in prev_adapters]
    sampler = PseudoSampler(m_pseudo, backbone.d, seed)
    new_ids = sorted(int(c) for c in np.unique(y))
    for epoch in range(epochs):
        feats = features(backbone, adapter, h)
        new_features = {c: feats[y == c] for c in new_ids}
        head = align_classifier(old_stats or ClassStats(), adapter, backbone, m_pseudo, new_features=new_features, sampler=sampler)
        index = {c: i for i, c in enumerate(head.class_ids)}
        yi = np.array([index[int(c)] for c in y])
        total, parts, grad = adapter_loss_and_grad(backbone, adapter, h, yi, head.weights, prev_w_ups, lam)
        if history is not None:
            history.append({**parts, "total": total})
        step = lr * (0.5 * (1 + math.cos(math.pi * epoch / epochs)) if cosine_decay else 1.0)
        adapter = Adapter(adapter.w_down - step * grad.w_down, adapter.w_up - step * grad.w_up)
    return adapter


def compute_visual_prototype(backbone: Backbone, first_adapter: Adapter, x: np.ndarray) -> np.ndarray:
    """Mean adapted feature of a task's training inputs under the first task's adapter."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("empty task data")
    return adapter_forward(backbone, first_adapter, x).mean(0)


# ---------------------------------------------------------------------------
# the continual stream


@dataclass
class TrainedStream:
    config: RunConfig
    backbone: Backbone
    adapters: list[Adapter]
    stats: ClassStats
    task_records: list[TaskRecord]
    logs: list[list[dict]] = field(default_factory=list)


def train_stream(world: SyntheticWorld, config: RunConfig, stream: DataStream | None = None) -> TrainedStream:
    """Learn every task in order; only class statistics outlive each task."""
    stream = stream or DataStream(world)
    backbone = Backbone.create(world.d_in, config.d, world.seed)
    stats = ClassStats()
    # every task starts from the same adapter so merged parameters stay unit-aligned
    shared_init = init_adapter(config.d, config.r, child_rng(config.seed, "adapter-init"))
    adapters: list[Adapter] = []
    records: list[TaskRecord] = []
    logs = []
    for t, class_ids in enumerate(world.tasks):
        x, y = stream.task_data(t, "train")
        h = backbone.pre(x)
        history: list[dict] = []
        adapter = train_adapter(
            backbone, h, y, stats if stats.means else None, adapters,
            lam=config.lam, epochs=config.epochs, lr=config.lr,
            seed=int(child_rng(config.seed, "train", t).integers(2**31)),
            r=config.r, m_pseudo=min(config.m_pseudo, 64), cosine_decay=config.cosine_decay,
            history=history,
            init=shared_init,
        )
        log.info("task %d: cls=%.4f orth=%.4f", t, history[-1]["cls"], history[-1]["orth"])
        stats.update(h, y)
        adapters.append(adapter)
        first = adapters[0]
        records.append(TaskRecord(
            task_id=t,
            class_ids=class_ids,
            params=adapter.flatten(),
            semantic_prototype=world.task_semantic[t],
            visual_prototype=compute_visual_prototype(backbone, first, x),
        ))
        logs.append(history)
    return TrainedStream(config, backbone, adapters, stats, records, logs)


class ForestEvaluator(ExpertEvaluator):
    """Batch evaluator over a fixed test set; samples are row indices.

    Each expert scores with its own head, re-aligned from the stored class
    statistics into that expert's feature space. Logits, probabilities and
    entropies are computed once per expert for all rows.
    """

    def __init__(self, backbone: Backbone, stats: ClassStats, h_test: np.ndarray, d: int, r: int, m_pseudo: int, seed: int):
        super().__init__()
        self.backbone = backbone
        self.stats = stats
        self.h = h_test
        self.d, self.r = d, r
        self.sampler = PseudoSampler(m_pseudo, d, seed)
        self.class_ids = tuple(stats.class_ids)
        self._tables: dict[int, tuple] = {}

    def table(self, node: ExpertNode):
        tab = self._tables.get(node.id)
        if tab is None:
            adapter = Adapter.from_flat(node.params, self.d, self.r)
            head = align_classifier(self.stats, adapter, self.backbone, self.sampler.m, sampler=self.sampler)
            logits = head.logits(features(self.backbone, adapter, self.h))
            probs, ent = softmax_rows(logits)
            tab = (logits, probs, ent)
            self._tables[node.id] = tab
        return tab

    def logits(self, node, sample):
        return self.table(node)[0][sample]

    def distribution(self, node, sample):
        _, probs, ent = self.table(node)
        return PredictiveDistribution(probs[sample], float(ent[sample]))


@dataclass
class StreamResult:
    accuracy: np.ndarray  # lower-triangular, nan above the diagonal
    abar: float
    a_t: float
    cost: CostReport
    traces: list[InferenceTrace] = field(default_factory=list, repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)
    hierarchy: ForestHierarchy | None = field(default=None, repr=False)


def average_accuracy(acc: np.ndarray) -> float:
    """Mean over steps of the mean accuracy on tasks seen so far."""
    acc = np.asarray(acc, dtype=np.float64)
    return float(np.mean([np.mean(acc[t, : t + 1]) for t in range(len(acc))]))


def final_accuracy(acc: np.ndarray) -> float:
    acc = np.asarray(acc, dtype=np.float64)
    return float(np.mean(acc[-1, : len(acc)]))


def accuracy_matrix_from_rows(rows) -> np.ndarray:
    """Pack ragged rows ``[[a11], [a21, a22], ...]`` into a square matrix (nan above diagonal)."""
    T = len(rows)
    acc = np.full((T, T), np.nan)
    for i, row in enumerate(rows):
        if len(row) != i + 1:
            raise ValueError(f"row {i} has {len(row)} entries, expected {i + 1}")
        acc[i, : i + 1] = row
    return acc


def evaluate_trained(
    world: SyntheticWorld,
    trained: TrainedStream,
    method: str = "saef",
    config: RunConfig | None = None,
    stream: DataStream | None = None,
    hierarchy: ForestHierarchy | None = None,
) -> StreamResult:
    """Fill the accuracy matrix by replaying the stream's checkpoints.

    After step ``i`` the model consists of adapters 1..i and the statistics
    of their classes; SAEF rebuilds its forest over those tasks. A prebuilt
    ``hierarchy`` over all tasks is used for the final step if given.
    """
    config = config or trained.config
    stream = stream or DataStream(world)
    if method not in ("saef", "flat"):
        raise ValueError(f"unknown method {method!r}")
    k_policy = parse_k_policy(config.k_policy)
    T = world.n_tasks
    test = [stream.task_data(j, "test") for j in range(T)]
    acc = np.full((T, T), np.nan)
    final_traces: list[InferenceTrace] = []
    final_hierarchy = None
    for i in range(T):
        seen_tasks = trained.task_records[: i + 1]
        seen_classes = sorted(c for t in seen_tasks for c in t.class_ids)
        x = np.concatenate([test[j][0] for j in range(i + 1)])
        y = np.concatenate([test[j][1] for j in range(i + 1)])
        owner = np.concatenate([np.full(len(test[j][1]), j) for j in range(i + 1)])
        evaluator = ForestEvaluator(
            trained.backbone, trained.stats.subset(seen_classes), trained.backbone.pre(x),
            config.d, config.r, config.m_pseudo, int(child_rng(config.seed, "eval").integers(2**31)),
        )
        class_ids = np.array(evaluator.class_ids)
        if method == "saef":
            if hierarchy is not None and i == T - 1:
                hier = hierarchy
            else:
                k = k_policy
                if isinstance(k, int):
                    k = min(k, i + 1)
                hier = build_hierarchy(seen_tasks, seed=config.seed, strategy=config.strategy, k=k)
            traces = [adaptive_infer(hier, s, evaluator, config.tau, config.tau_e) for s in range(len(y))]
        else:
            hier = None
            leaves = [
                ExpertNode(id=t.task_id, params=t.params, prototype=None, source_tasks=frozenset([t.task_id]))
                for t in seen_tasks
            ]
            traces = [flat_ensemble_infer(leaves, s, evaluator) for s in range(len(y))]
        pred = class_ids[[tr.prediction for tr in traces]]
        correct = pred == y
        for j in range(i + 1):
            acc[i, j] = correct[owner == j].mean()
        if i == T - 1:
            final_traces, final_hierarchy = traces, hier
            final_labels = y
    k = final_hierarchy.k if final_hierarchy is not None else 0
    if method == "saef":
        cost = cost_report(final_traces, T, k)
    else:
        cost = CostReport(T, 0, float("nan"), float(np.mean([t.evaluations for t in final_traces])), 1.0)
    return StreamResult(
        accuracy=acc,
        abar=average_accuracy(acc),
        a_t=final_accuracy(acc),
        cost=cost,
        traces=final_traces,
        labels=final_labels,
        hierarchy=final_hierarchy,
    )


def evaluate_stream(world: SyntheticWorld, method: str = "saef", config: RunConfig | None = None) -> StreamResult:
    """Train the whole stream, then fill the accuracy matrix for ``method``."""
    config = config or RunConfig()
    stream = DataStream(world)
    trained = train_stream(world, config, stream)
    return evaluate_trained(world, trained, method, config, stream)
