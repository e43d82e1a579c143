"""Acceptance criteria, each at its stated tolerance and runtime budget."""
import time
from dataclasses import replace

import networkx as nx
import numpy as np
import pytest

from treefilter.bench import run_scaling_bench
from treefilter.cli import main
from treefilter.feature_map import FeatureMap
from treefilter.gradients import gradient_suite
from treefilter.grid_graph import build_grid, edge_weights
from treefilter.mrf_oracle import (
    enumerate_marginals, filtering_weights, lemma3_witness, random_instance, verify_lemma1,
    verify_lemma2,
)
from treefilter.spanning import build_trees, is_spanning_tree, mst, sample_random_spanning_tree
from treefilter.toy_learner import ToyTask, TrainConfig, compare_tree_modes, train
from treefilter.tree_filter import forward_bruteforce, forward_v1, forward_v2

criterion = pytest.mark.criterion


def _note(record_property, text):
    record_property("detail", text)
    print(text)


def _filter_instance(rng):
    while True:
        h, w = (int(v) for v in rng.integers(1, 9, 2))
        if h * w <= 64:
            break
    groups = int(rng.choice([1, 2, 4]))
    channels = groups * int(rng.integers(1, 8 // groups + 1))
    grid = build_grid(h, w, groups)
    graph = grid.with_weights(rng.exponential(1.0, (grid.n_edges, groups)))
    trees = build_trees(graph, str(rng.choice(["mst", "random"])), seed=int(rng.integers(1 << 30)))
    x = FeatureMap(rng.normal(size=(h, w, channels)), groups)
    return x, trees, graph, rng.uniform(0.01, 1.0, (h * w, groups)), rng.uniform(-1, 2, groups)


@criterion(1, "oracle equivalence: DP vs brute force")
def test_oracle_equivalence(record_property):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, group_counts = 0.0, set()
    for _ in range(200):
        x, trees, graph, unary, beta = _filter_instance(rng)
        group_counts.add(x.groups)
        dp = forward_v2(x, trees, graph, unary, beta).output.data
        bf = forward_bruteforce(x, trees, graph, unary, beta).output.data
        worst = max(worst, float(np.abs(dp - bf).max()))
    elapsed = time.perf_counter() - t0
    _note(record_property, f"200 instances, max abs err {worst:.2e}, {elapsed:.1f}s")
    assert group_counts == {1, 2, 4}
    assert worst <= 1e-10
    assert elapsed < 30


@criterion(2, "MRF marginals equal filtering weights")
def test_marginals_equal_weights(record_property):
    rng = np.random.default_rng(202)
    reports = [verify_lemma1(*random_instance(rng, 10, "mst" if k % 2 else "random"),
                             tolerance=1e-12) for k in range(50)]
    worst = max(r.residual for r in reports)
    _note(record_property, f"50 instances, max residual {worst:.2e}")
    assert all(r.passed for r in reports)


@criterion(3, "pairwise-only weights non-increasing from the root")
def test_weights_monotone(record_property):
    rng = np.random.default_rng(303)
    worst = -np.inf
    for k in range(50):
        graph, tree = random_instance(rng, 10, "mst" if k % 2 else "random")
        assert verify_lemma2(graph, tree, slack=1e-15).passed
        weights = filtering_weights(graph, tree)
        for root in range(graph.n_nodes):
            r = tree.rerooted(root)
            child = r.order[1:]
            if len(child):
                worst = max(worst, float((weights[root, child] - weights[root, r.parent[child]]).max()))
    _note(record_property, f"50 instances, max increase along a path {worst:.2e}")
    assert worst <= 1e-15


@criterion(4, "unary witness: distant node outweighs near one")
def test_unary_witness(record_property):
    p = enumerate_marginals(lemma3_witness(0.0), 0)
    exact = np.array([1 / 3, 1 / 15, 3 / 5])
    _note(record_property, f"P(a,b,c) = ({p[0]:.17g}, {p[1]:.17g}, {p[2]:.17g})")
    assert p[2] > p[1]
    np.testing.assert_allclose(p, exact, rtol=2 * np.finfo(float).eps, atol=0)


@criterion(5, "gradients vs central finite differences")
def test_gradients(record_property):
    t0 = time.perf_counter()
    worst, failed, n = {}, [], 0
    for k, report in gradient_suite(60, seed=505):
        n += 1
        for name, err in report.errors.items():
            worst[name] = max(worst.get(name, 0.0), err)
        if not report.passed:
            failed.append((k, report.table()))
    elapsed = time.perf_counter() - t0
    summary = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    _note(record_property, f"{n} configs, worst {summary}, {elapsed:.1f}s")
    assert not failed, failed
    assert elapsed < 120


@criterion(6, "reduction: v2 with f=1, beta=0 is v1")
def test_reduction(record_property):
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(100):
        x, trees, graph, _, _ = _filter_instance(rng)
        ones = np.ones((x.n_nodes, x.groups))
        v1 = forward_v1(x, trees, graph).output.data
        v2 = forward_v2(x, trees, graph, ones, np.zeros(x.groups)).output.data
        assert np.array_equal(v1, v2)
        bf = forward_bruteforce(x, trees, graph, ones, np.zeros(x.groups)).output.data
        worst = max(worst, float(np.abs(v1 - bf).max()))
    _note(record_property, f"100 instances bitwise; vs brute-force v1 {worst:.2e}")
    assert worst <= 1e-12


@criterion(7, "random spanning tree validity and support")
def test_random_tree_fuzz(record_property):
    rng = np.random.default_rng(707)
    grid = build_grid(5, 5)
    for k in range(1000):
        graph = grid.with_weights(rng.exponential(rng.uniform(0.01, 5), grid.n_edges))
        tree = sample_random_spanning_tree(graph, rng_seed=k)
        assert len(tree.tree_edges) == 24
        assert is_spanning_tree(25, tree.tree_edges[:, :2])
    square = build_grid(2, 2)
    seen, draws = set(), 0
    for s in range(10_000):
        draws += 1
        seen.add(sample_random_spanning_tree(square, rng_seed=s).edge_set())
        if len(seen) == 4:
            break
    _note(record_property, f"1000 valid 5x5 trees; all 4 trees of the 2x2 grid after {draws} draws")
    assert len(seen) == 4


@criterion(8, "MST equals Kruskal")
def test_mst_kruskal(record_property):
    rng = np.random.default_rng(808)
    for _ in range(100):
        h, w = (int(v) for v in rng.integers(1, 9, 2))
        grid = build_grid(h, w)
        graph = grid.with_weights(rng.permutation(grid.n_edges) + rng.random())
        g = nx.Graph()
        g.add_nodes_from(range(h * w))
        g.add_weighted_edges_from((int(a), int(b), float(c))
                                  for (a, b), c in zip(graph.edges, graph.weights[:, 0]))
        ref = {tuple(sorted(e)) for e in nx.minimum_spanning_edges(g, algorithm="kruskal", data=False)}
        assert mst(graph).edge_set() == ref
    _note(record_property, "100 grids up to 8x8, edge sets identical")


@criterion(9, "linear runtime")
def test_linear_runtime(record_property):
    sizes = [(16, 16), (32, 32), (64, 64), (128, 128), (256, 256)]
    report = run_scaling_bench(sizes, channels=16, groups=1, repeats=7)
    visits = [2 * 2 * (n - 1) for n in report.n_nodes]
    _note(record_property, f"slope {report.slope:.3f} over {report.n_nodes[0]}..{report.n_nodes[-1]} nodes")
    assert report.edge_visits == visits
    assert len(report.n_nodes) == len(sizes)
    assert 0.85 <= report.slope <= 1.25


@criterion(10, "toy training trend across tree modes")
def test_toy_trend(record_property):
    t0 = time.perf_counter()
    summary = compare_tree_modes(ToyTask(), TrainConfig(), n_seeds=5)
    elapsed = time.perf_counter() - t0
    cuts = [final / init for _, _, init, final, _ in summary.rows]
    _note(record_property,
          f"mean final mst {summary.means['mst']:.5f}, learnable-random "
          f"{summary.means['learnable-random']:.5f}, worst cut {max(cuts):.3f}, {elapsed:.0f}s")
    assert max(cuts) < 0.5
    assert summary.direction_holds(margin=0.10)
    assert elapsed < 300


@criterion(11, "determinism")
def test_determinism(tmp_path, record_property):
    rng = np.random.default_rng(1111)
    x = FeatureMap(rng.random((12, 13, 6)), groups=3)
    graph = edge_weights(x, build_grid(12, 13, 3))
    unary = rng.uniform(0.1, 1, (156, 3))
    outs = [forward_v2(x, build_trees(graph, "mst"), graph, unary, 0.3).output.data
            for _ in range(2)]
    assert np.array_equal(*outs)

    task = ToyTask(height=12, width=12)
    cfg = TrainConfig(steps=25, tree_mode="learnable-random", sample_seed=4)
    a, b = train(task, cfg), train(task, cfg)
    assert a.losses == b.losses and a.final_val_loss == b.final_val_loss

    img = tmp_path / "x.ppm"
    from treefilter.feature_map import write_image
    write_image(rng.integers(0, 256, (10, 9, 3), dtype=np.uint8), img)
    commands = [
        ["filter", str(img), "{out}.ppm", "--tree", "mst"],
        ["filter", str(img), "{out}.ppm", "--tree", "random", "--seed", "5"],
        ["tree", str(img), "{out}.txt", "--tree", "random", "--seed", "5"],
        ["affinity", str(img), "{out}", "--mark", "3", "3", "--tree", "random", "--seed", "5",
         "--raw"],
        ["train-toy", "--size", "10", "--steps", "10", "--tree-mode", "learnable-random",
         "--seed", "2", "-o", "{out}.csv"],
        ["compare-trees", "--size", "10", "--steps", "5", "--seeds", "2", "-o", "{out}.csv"],
    ]
    for k, cmd in enumerate(commands):
        blobs = []
        for run in range(2):
            out = str(tmp_path / f"c{k}_{run}")
            assert main([c.replace("{out}", out) for c in cmd]) == 0
            files = sorted(tmp_path.glob(f"c{k}_{run}*"))
            assert files
            blobs.append([f.read_bytes() for f in files])
        assert blobs[0] == blobs[1], cmd
    _note(record_property, f"MST filtering, training and {len(commands)} seeded commands bit-identical")
