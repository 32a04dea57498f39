import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_forest, ref_infer, ref_path, table_evaluator
from saef.clustering import ClusterAssignment
from saef.forest import ExpertNode, ForestHierarchy
from saef.inference import (
    ExpertEvaluator,
    InferenceTrace,
    adaptive_infer,
    cost_report,
    find_path,
    flat_ensemble_infer,
    fusion_weights,
    theoretical_speedup,
)

ONE_HOT = [50.0, 0.0, 0.0]
UNIFORM = [0.0, 0.0, 0.0]


def node(i, children=()):
    return ExpertNode(id=i, params=np.zeros(1), prototype=None, children=tuple(children))


def hierarchy(roots, global_node=None):
    nodes = {n.id: n for r in roots for n in r.walk()}
    if global_node is not None:
        nodes[global_node.id] = global_node
    return ForestHierarchy(
        assignment=ClusterAssignment.from_labels(range(len(roots))),
        roots=tuple(r.id for r in roots),
        global_root=global_node.id if global_node is not None else roots[0].id,
        nodes=nodes,
    )


def test_single_leaf_path():
    ev = table_evaluator({0: [1.0, 2.0]})
    assert find_path(node(0), 0, ev) == [0]


def test_max_threshold_stops_at_root():
    left, right = node(1), node(2)
    root = node(0, (left, right))
    ev = table_evaluator({0: UNIFORM, 1: ONE_HOT, 2: UNIFORM})
    assert find_path(root, 0, ev, tau_e=math.log(3) - 1e-6) == [0, 1]
    assert find_path(root, 0, ev, tau_e=math.log(3)) == [0]
    # tau_e = 0 never exits early, even on a one-hot node
    ev = table_evaluator({0: ONE_HOT, 1: UNIFORM, 2: UNIFORM})
    assert find_path(root, 0, ev, tau_e=0.0) == [0, 1]


def test_descends_to_lower_entropy_child():
    root = node(0, (node(1), node(2)))
    assert find_path(root, 0, table_evaluator({0: UNIFORM, 1: ONE_HOT, 2: UNIFORM})) == [0, 1]
    assert find_path(root, 0, table_evaluator({0: UNIFORM, 1: UNIFORM, 2: ONE_HOT})) == [0, 2]
    # ties go left
    assert find_path(root, 0, table_evaluator({0: UNIFORM, 1: UNIFORM, 2: UNIFORM})) == [0, 1]


def test_single_leaf_hierarchy():
    h = hierarchy([node(0)])
    tr = adaptive_infer(h, 0, table_evaluator({0: [1.0, 3.0]}))
    assert tr.activated == (0,)
    np.testing.assert_allclose(tr.fused.probs, [1 / (1 + math.e**2), 1 / (1 + math.e**-2)])


def test_global_and_leaf_identical():
    g, leaf = node(5), node(0)
    h = hierarchy([leaf], g)
    h = ForestHierarchy(h.assignment, (0,), 5, {0: leaf, 5: g})
    tr = adaptive_infer(h, 0, table_evaluator({0: [0.2, 1.0, -1.0], 5: [0.2, 1.0, -1.0]}))
    assert set(tr.activated) == {5, 0}
    np.testing.assert_allclose(tr.fused.probs, np.exp([0.2, 1, -1]) / np.exp([0.2, 1, -1]).sum())


def test_weights_for_zero_and_ln2():
    np.testing.assert_allclose(fusion_weights([0.0, math.log(2)], 1.0), [2 / 3, 1 / 3])


def test_seven_node_forest_matches_oracle():
    rnd = random.Random(42)
    a = node(0, (node(1), node(2)))
    b = node(3, (node(4), node(5)))
    h = hierarchy([a, b], node(6))
    children = {0: (1, 2), 3: (4, 5)}
    table = {i: [rnd.gauss(0, 2) for _ in range(4)] for i in range(7)}
    tr = adaptive_infer(h, 0, table_evaluator(table), tau=0.7)
    paths, activated, weights, fused = ref_infer(h, children, table, 0.7, 0.0)
    assert [list(p) for p in tr.paths] == paths
    assert list(tr.activated) == activated
    np.testing.assert_allclose(tr.weights, weights, atol=1e-12)
    np.testing.assert_allclose(tr.fused.probs, fused, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.0, 0.3, 0.8, 1.5]))
def test_random_forests_match_oracle(seed, tau_e):
    h, children, table = random_forest(random.Random(seed))
    tr = adaptive_infer(h, 0, table_evaluator(table), tau=1.0, tau_e=tau_e)
    paths, activated, weights, fused = ref_infer(h, children, table, 1.0, tau_e)
    assert [list(p) for p in tr.paths] == paths
    assert list(tr.activated) == activated
    np.testing.assert_allclose(tr.weights, weights, atol=1e-12)
    np.testing.assert_allclose(tr.fused.probs, fused, atol=1e-12)
    assert tr.evaluations <= len(h.nodes)


def test_each_expert_evaluated_once_per_sample():
    calls = []
    table = {i: [float(i), 0.0, 1.0] for i in range(7)}

    def logits(n, s):
        calls.append(n.id)
        return np.array(table[n.id])

    a = node(0, (node(1), node(2)))
    b = node(3, (node(4), node(5)))
    tr = adaptive_infer(hierarchy([a, b], node(6)), 0, ExpertEvaluator(logits))
    assert len(calls) == len(set(calls)) == tr.evaluations


def test_weights_properties():
    rng = np.random.default_rng(0)
    for _ in range(100):
        h = rng.uniform(0, 3, size=rng.integers(1, 8))
        w = fusion_weights(h, 0.5)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.argmax(w) == np.argmin(h)
    with pytest.raises(ValueError):
        fusion_weights([0.1], 0.0)


def test_speedup_formula():
    assert theoretical_speedup(20, 2, 1.0) == pytest.approx(20 / 3)
    tr = InferenceTrace((0, 1), ((1,), (2,)), (0.5, 0.5), None, 3)
    rep = cost_report([tr, tr], 20, 2)
    assert rep.mean_depth == 1.0 and rep.mean_evaluations == 3.0
    assert rep.theoretical_speedup == pytest.approx(20 / 3)
    with pytest.raises(ValueError):
        cost_report([], 20, 2)


def test_flat_single_expert():
    ev = table_evaluator({0: [0.1, 2.0, -1.0]})
    tr = flat_ensemble_infer([node(0)], 0, ev)
    assert tr.prediction == 1 and tr.evaluations == 1


def test_flat_global_max_wins():
    ev = table_evaluator({0: [3.0, 2.9, 0.0], 1: [0.0, 0.0, 5.0]})
    tr = flat_ensemble_infer([node(0), node(1)], 0, ev)
    assert tr.prediction == 2 and tr.weights == (0.0, 1.0)


def test_flat_counts_every_expert():
    table = {i: list(np.random.default_rng(i).normal(size=4)) for i in range(10)}
    tr = flat_ensemble_infer([node(i) for i in range(10)], 0, table_evaluator(table))
    assert tr.evaluations == 10
    with pytest.raises(ValueError):
        flat_ensemble_infer([], 0, table_evaluator(table))
