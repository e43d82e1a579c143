import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import path_tree
from treefilter.grid_graph import build_grid
from treefilter.mrf_oracle import (
    TreeMRF, belief_propagation_marginals, enumerate_marginals, filtering_weights,
    random_instance, verify_lemma1, verify_lemma2, verify_lemma3,
)
from treefilter.spanning import mst, root_tree
from treefilter.tree_filter import affinity_map


def test_uniform_when_distances_vanish():
    tree = path_tree(5)
    mrf = TreeMRF.plain(tree, np.zeros(4))
    for r in range(5):
        np.testing.assert_allclose(enumerate_marginals(mrf, r), 0.2, atol=1e-16)


def test_path_examples():
    mrf = TreeMRF.plain(path_tree(3), np.full(2, math.log(2)))
    np.testing.assert_allclose(enumerate_marginals(mrf, 0), [4 / 7, 2 / 7, 1 / 7], atol=1e-15)
    v2 = TreeMRF(path_tree(3), np.zeros(2), np.array([0.5, 0.1, 0.9]), 0.0)
    np.testing.assert_allclose(enumerate_marginals(v2, 0), [1 / 3, 1 / 15, 3 / 5], atol=1e-15)


def test_single_node_and_caps():
    one = TreeMRF.plain(root_tree(1, [], 0), np.zeros(0))
    assert enumerate_marginals(one, 0).tolist() == [1.0]
    assert belief_propagation_marginals(one, 0).tolist() == [1.0]
    big = TreeMRF.plain(path_tree(13), np.zeros(12))
    with pytest.raises(ValueError):
        enumerate_marginals(big, 0)
    with pytest.raises(ValueError):
        enumerate_marginals(TreeMRF.plain(path_tree(8), np.zeros(7)), 0, exhaustive=True)


def test_star_symmetric_over_leaves():
    star = root_tree(5, [(0, k, k - 1) for k in range(1, 5)], 0)
    mrf = TreeMRF.plain(star, np.full(4, 0.7))
    p = belief_propagation_marginals(mrf, 0)
    np.testing.assert_allclose(p[1:], p[1], atol=1e-16)
    assert p[0] > p[1]


def _random_mrf(rng, max_nodes):
    graph, tree = random_instance(rng, max_nodes, rng.choice(["mst", "random"]))
    f = rng.uniform(0.05, 1.0, graph.n_nodes)
    return graph, TreeMRF(tree, graph.weights[:, 0], f, float(rng.uniform(-1, 2)))


@given(st.integers(0, 2**32 - 1))
def test_bp_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    _, mrf = _random_mrf(rng, 10)
    for r in range(mrf.n_nodes):
        np.testing.assert_allclose(belief_propagation_marginals(mrf, r),
                                   enumerate_marginals(mrf, r), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_collapsed_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    _, mrf = _random_mrf(rng, 6)
    for r in range(mrf.n_nodes):
        np.testing.assert_allclose(enumerate_marginals(mrf, r, exhaustive=True),
                                   enumerate_marginals(mrf, r), atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_three_codepaths_agree(seed):
    rng = np.random.default_rng(seed)
    graph, mrf = _random_mrf(rng, 10)
    for r in range(mrf.n_nodes):
        amap = affinity_map(None, mrf.tree, graph, mrf.f, mrf.beta, r, "full").nodes[:, 0]
        np.testing.assert_allclose(amap, enumerate_marginals(mrf, r), atol=1e-12)
        np.testing.assert_allclose(amap, belief_propagation_marginals(mrf, r), atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_rescaling_unary_leaves_marginals(seed, scale):
    rng = np.random.default_rng(seed)
    _, mrf = _random_mrf(rng, 7)
    scaled = TreeMRF(mrf.tree, mrf.weights, mrf.f, mrf.beta, phi_scale=scale)
    r = int(rng.integers(mrf.n_nodes))
    np.testing.assert_allclose(scaled.factor_tables(r)[0], scale * mrf.factor_tables(r)[0],
                               rtol=1e-15)
    for exhaustive in (False, True):
        np.testing.assert_allclose(enumerate_marginals(scaled, r, exhaustive),
                                   enumerate_marginals(mrf, r, exhaustive), atol=1e-12)
    np.testing.assert_allclose(belief_propagation_marginals(scaled, r),
                               enumerate_marginals(mrf, r), atol=1e-12)


def test_factor_tables_nonnegative():
    rng = np.random.default_rng(0)
    _, mrf = _random_mrf(rng, 9)
    unary, pairwise = mrf.factor_tables(0)
    assert np.all(unary >= 0)
    assert all(np.all(t >= 0) for t in pairwise.values())
    assert mrf.partition(0) > 0


def test_marginals_match_filter_examples():
    grid = build_grid(3, 3)
    graph = grid.with_weights(np.random.default_rng(2).exponential(1, grid.n_edges))
    assert verify_lemma1(graph, mst(graph)).passed
    flat = build_grid(2, 3)
    np.testing.assert_allclose(filtering_weights(flat, mst(flat)), 1 / 6, atol=1e-15)
    assert verify_lemma1(flat, mst(flat)).passed


def test_single_edge_hand_expansion():
    graph = build_grid(1, 2).with_weights(np.array([1.0]))
    tree = mst(graph)
    e = math.exp(-1)
    w = filtering_weights(graph, tree)
    np.testing.assert_allclose(w, [[1 / (1 + e), e / (1 + e)], [e / (1 + e), 1 / (1 + e)]],
                               atol=1e-16)
    mrf = TreeMRF.plain(tree, graph.weights[:, 0])
    np.testing.assert_allclose(enumerate_marginals(mrf, 0), [1 / (1 + e), e / (1 + e)],
                               atol=1e-16)
    np.testing.assert_allclose(enumerate_marginals(mrf, 1), [e / (1 + e), 1 / (1 + e)],
                               atol=1e-16)


def test_marginal_check_detects_perturbation():
    graph, tree = random_instance(np.random.default_rng(4), 9)
    assert not verify_lemma1(graph, tree, perturb=0.1).passed


@given(st.integers(0, 2**32 - 1))
def test_plain_marginals_monotone(seed):
    graph, tree = random_instance(np.random.default_rng(seed), 10)
    assert verify_lemma2(graph, tree).passed


def test_unary_witness_beats_geometry():
    rep = verify_lemma3()
    assert rep.passed and rep.residual < 1e-15
    # a large path penalty restores the geometric constraint
    assert not verify_lemma3(beta=50.0).passed
