"""Tree filtering in O(N) per group.

Each tree edge folds its distance and the path-length penalty into a single
transmission t = exp(-(w + beta)).  With f the per-node unary confidence,

    up:    U(v) = f_v x_v + sum_{c child of v} t_c U(c)
    down:  D(root) = U(root),  D(c) = U(c) + t_c (D(parent) - t_c U(c))

and y_i = D_num(i) / D_den(i), where the denominator runs the same passes with
x replaced by 1.  This equals the sum over all sources j of
f_j * prod(t on path j->i) * x_j, normalized.
"""
from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .feature_map import FeatureMap
from .grid_graph import GridGraph, UnaryParams, edge_weights, joint_affinity, unary_values, build_grid
from .spanning import SpanningTree, build_trees

BRUTEFORCE_CAP = 4096


class FilterInvariantError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FilterState:
    output: FeatureMap
    normalizer: np.ndarray  # (N, G)
    up_num: np.ndarray  # (N, C)
    up_den: np.ndarray  # (N, G)
    down_num: np.ndarray  # (N, C)
    down_den: np.ndarray  # (N, G)
    transmissions: np.ndarray  # (G, N), edge toward parent; 0 at the root
    trees: tuple
    graph: GridGraph
    unary: np.ndarray  # (N, G)
    beta: np.ndarray  # (G,)
    edge_visits: np.ndarray  # (G, 2): up, down


@numba.njit(cache=True, nogil=True)
def _two_pass(order, parent, t, f, x):
    n, c = x.shape
    up = np.empty((n, c))
    up_den = f.copy()
    for i in range(n):
        for k in range(c):
            up[i, k] = f[i] * x[i, k]
    visits_up = 0
    for s in range(n - 1, 0, -1):
        v = order[s]
        p = parent[v]
        tv = t[v]
        for k in range(c):
            up[p, k] += tv * up[v, k]
        up_den[p] += tv * up_den[v]
        visits_up += 2
    down = up.copy()
    down_den = up_den.copy()
    visits_down = 0
    for s in range(1, n):
        v = order[s]
        p = parent[v]
        tv = t[v]
        for k in range(c):
            down[v, k] = up[v, k] + tv * (down[p, k] - tv * up[v, k])
        down_den[v] = up_den[v] + tv * (down_den[p] - tv * up_den[v])
        visits_down += 2
    return up, up_den, down, down_den, visits_up, visits_down


def _two_pass_levels(levels, parent, t, f, x):
    """Same recurrences evaluated one depth level at a time."""
    up = f[:, None] * x
    up_den = f.copy()
    visits_up = visits_down = 0
    for nodes in reversed(levels[1:]):
        p = parent[nodes]
        tv = t[nodes]
        np.add.at(up, p, tv[:, None] * up[nodes])
        np.add.at(up_den, p, tv * up_den[nodes])
        visits_up += 2 * len(nodes)
    down = up.copy()
    down_den = up_den.copy()
    for nodes in levels[1:]:
        p = parent[nodes]
        tv = t[nodes]
        down[nodes] = up[nodes] + tv[:, None] * (down[p] - tv[:, None] * up[nodes])
        down_den[nodes] = up_den[nodes] + tv * (down_den[p] - tv * up_den[nodes])
        visits_down += 2 * len(nodes)
    return up, up_den, down, down_den, visits_up, visits_down


def _as_trees(tree, groups: int) -> tuple:
    if isinstance(tree, SpanningTree):
        return (tree,) * groups
    trees = tuple(tree)
    if len(trees) != groups:
        raise ValueError(f"expected {groups} trees, got {len(trees)}")
    return trees


def _check_inputs(x: FeatureMap, trees, graph: GridGraph, unary, beta):
    n, g = x.n_nodes, x.groups
    if (graph.height, graph.width) != (x.height, x.width):
        raise ValueError("graph and feature map sizes differ")
    if graph.groups != g:
        raise ValueError(f"graph has {graph.groups} weight groups, feature map has {g}")
    trees = _as_trees(trees, g)
    for tr in trees:
        if tr.n_nodes != n:
            raise ValueError("tree size does not match feature map")
    unary = np.asarray(unary, dtype=np.float64)
    if unary.ndim == 1:
        unary = unary[:, None]
    if unary.shape != (n, g):
        raise ValueError(f"unary shape {unary.shape}, expected {(n, g)}")
    if not np.all(np.isfinite(unary)) or np.any(unary <= 0):
        raise ValueError("unary values must be finite and positive")
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), (g,)).copy()
    return trees, unary, beta


def transmissions(tree: SpanningTree, weights: np.ndarray, beta: float) -> np.ndarray:
    """Per-node transmission of the edge toward the parent (0 at the root)."""
    t = np.zeros(tree.n_nodes)
    child = tree.parent_edge >= 0
    t[child] = np.exp(-(weights[tree.parent_edge[child]] + beta))
    return t


def forward_v2(x: FeatureMap, tree, graph: GridGraph, unary, beta,
               schedule: str = "sequential", threads: int = 1) -> FilterState:
    trees, unary, beta = _check_inputs(x, tree, graph, unary, beta)
    n, c, groups, cg = x.n_nodes, x.channels, x.groups, x.group_width
    nodes = x.nodes

    def run(g):
        tr = trees[g]
        t = transmissions(tr, graph.weights[:, g], beta[g])
        xs = np.ascontiguousarray(nodes[:, g * cg:(g + 1) * cg])
        if schedule == "sequential":
            res = _two_pass(tr.order, tr.parent, t, unary[:, g].copy(), xs)
        elif schedule == "levels":
            res = _two_pass_levels(tr.levels, tr.parent, t, unary[:, g].copy(), xs)
        else:
            raise ValueError(f"unknown schedule {schedule!r}")
        return t, res

    if threads > 1 and groups > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(groups)))
    else:
        results = [run(g) for g in range(groups)]

    up = np.empty((n, c))
    down = np.empty((n, c))
    up_den = np.empty((n, groups))
    down_den = np.empty((n, groups))
    trans = np.empty((groups, n))
    visits = np.empty((groups, 2), dtype=np.int64)
    for g, (t, (u, ud, d, dd, vu, vd)) in enumerate(results):
        sl = slice(g * cg, (g + 1) * cg)
        up[:, sl] = u
        down[:, sl] = d
        up_den[:, g] = ud
        down_den[:, g] = dd
        trans[g] = t
        visits[g] = vu, vd
    if not np.all(down_den > 0):
        raise FilterInvariantError("non-positive normalizer")
    y = down / np.repeat(down_den, cg, axis=1)
    out = FeatureMap.from_nodes(y, x.height, x.width, groups)
    return FilterState(out, down_den, up, up_den, down, down_den, trans, trees, graph,
                       unary, beta, visits)


def forward_v1(x: FeatureMap, tree, graph: GridGraph, **kwargs) -> FilterState:
    ones = np.ones((x.n_nodes, x.groups))
    return forward_v2(x, tree, graph, ones, np.zeros(x.groups), **kwargs)


def _adjacency(tree: SpanningTree):
    adj = [[] for _ in range(tree.n_nodes)]
    for a, b, e in tree.tree_edges:
        adj[a].append((int(b), int(e)))
        adj[b].append((int(a), int(e)))
    return adj


def path_weights(tree: SpanningTree, weights: np.ndarray, beta: float, source: int) -> np.ndarray:
    """prod of exp(-(w + beta)) over the tree path from ``source`` to every node."""
    adj = _adjacency(tree)
    prod = np.full(tree.n_nodes, np.nan)
    prod[source] = 1.0
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for u, e in adj[v]:
            if np.isnan(prod[u]):
                prod[u] = prod[v] * np.exp(-(weights[e] + beta))
                queue.append(u)
    return prod


def forward_bruteforce(x: FeatureMap, tree, graph: GridGraph, unary, beta,
                       cap: int = BRUTEFORCE_CAP) -> FilterState:
    """O(N^2) oracle: explicit path products from every sink to every source."""
    if x.n_nodes > cap:
        raise ValueError(f"{x.n_nodes} nodes exceeds the brute-force cap {cap}")
    trees, unary, beta = _check_inputs(x, tree, graph, unary, beta)
    n, c, groups, cg = x.n_nodes, x.channels, x.groups, x.group_width
    nodes = x.nodes
    y = np.empty((n, c))
    z = np.empty((n, groups))
    for g in range(groups):
        sl = slice(g * cg, (g + 1) * cg)
        for i in range(n):
            w = path_weights(trees[g], graph.weights[:, g], beta[g], i) * unary[:, g]
            z[i, g] = w.sum()
            y[i, sl] = w @ nodes[:, sl] / z[i, g]
    out = FeatureMap.from_nodes(y, x.height, x.width, groups)
    empty = np.empty((0, 0))
    return FilterState(out, z, empty, empty, empty, empty, np.empty((groups, 0)), trees, graph,
                       unary, beta, np.zeros((groups, 2), dtype=np.int64))


@numba.njit(cache=True, nogil=True)
def _products_from_root(order, parent, t):
    prod = np.empty(order.shape[0])
    prod[order[0]] = 1.0
    for s in range(1, order.shape[0]):
        v = order[s]
        prod[v] = prod[parent[v]] * t[v]
    return prod


AFFINITY_MODES = ("unary-only", "pairwise-only", "full")


def affinity_map(state: FilterState | None, tree, graph: GridGraph, unary, beta,
                 node: int, mode: str = "full") -> FeatureMap:
    """Filtering weights P(h_node = j) over all sources j, one channel per group.

    In full mode the map is normalized by the filter's own normalizer when a
    state is supplied, so the sum-to-one property checks the DP.
    """
    n, groups = graph.n_nodes, graph.groups
    if not 0 <= node < n:
        raise ValueError(f"node {node} out of range")
    if mode not in AFFINITY_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    trees = _as_trees(tree, groups)
    unary = np.asarray(unary, dtype=np.float64).reshape(n, groups)
    beta = np.broadcast_to(np.asarray(beta, dtype=np.float64), (groups,))
    out = np.empty((n, groups))
    for g in range(groups):
        tr = trees[g].rerooted(node)
        if mode == "unary-only":
            w = unary[:, g].copy()
        else:
            b = beta[g] if mode == "full" else 0.0
            w = _products_from_root(tr.order, tr.parent, transmissions(tr, graph.weights[:, g], b))
            if mode == "full":
                w *= unary[:, g]
        z = state.normalizer[node, g] if (state is not None and mode == "full") else w.sum()
        out[:, g] = w / z
    return FeatureMap.from_nodes(out, graph.height, graph.width, groups)


def transform(x: FeatureMap, g: FeatureMap, params: UnaryParams, trees=None,
              tree_mode: str = "mst", seed=0, joint: bool = True,
              schedule: str = "sequential", threads: int = 1) -> FilterState:
    """Full module: distances from G (joined with X when ``joint``), trees, unary, filter."""
    if g.groups != x.groups:
        g = g.with_groups(x.groups)
    grid = build_grid(x.height, x.width, x.groups)
    graph = edge_weights(g, grid)
    if joint:
        graph = joint_affinity(edge_weights(x, grid), graph)
    if trees is None:
        trees = build_trees(graph, tree_mode, seed)
    f = unary_values(x, params)
    return forward_v2(x, trees, graph, f, params.beta, schedule=schedule, threads=threads)
