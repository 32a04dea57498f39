"""Semantic-guided adaptive expert forest.

Organizes a pool of task adapters into conceptual clusters of balanced
sign-max merge trees under a global expert, and routes each input through
an entropy-guided search with confidence-weighted fusion.
"""

from saef.core import (
    PredictiveDistribution,
    VisualPrototype,
    cosine_similarity,
    shannon_entropy,
    softmax,
)
from saef.clustering import ClusterAssignment, find_optimal_k, kmeans, silhouette_score
from saef.forest import (
    ExpertNode,
    ForestHierarchy,
    TaskRecord,
    build_hierarchy,
    build_tree,
    global_root_merge,
    merge_prototypes,
    sign_max_merge,
)
from saef.inference import (
    CostReport,
    ExpertEvaluator,
    InferenceTrace,
    adaptive_infer,
    cost_report,
    find_path,
    flat_ensemble_infer,
    theoretical_speedup,
)

__version__ = "0.1.0"
