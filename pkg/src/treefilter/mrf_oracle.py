"""Exact marginals of the tree MRF behind the filter, for tiny trees.

For a query root r every latent h_k ranges over all nodes.  Factor tables are
root specific:

* pairwise, edge (p, c) with p the parent of c under r:
  psi(h_p, h_c) = delta(h_p - h_c) * (exp(-w) if h_p lies in the subtree of c else 1)
* unary, node k:
  phi_k(h) = f_k if h == k, exp(-beta) if h is a strict descendant of k, 1 otherwise

so a node pays exp(-beta) only when it relays a feature from below.  With
f = 1 and beta = 0 every unary factor is 1 and the model is the plain
delta-coupled one.  Marginals of h_r reproduce the filtering weights
f_j * prod exp(-(w + beta)) over the path j -> r, normalized.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .feature_map import FeatureMap
from .grid_graph import GridGraph, build_grid
from .spanning import SpanningTree, root_tree
from .tree_filter import forward_v1

ENUMERATION_CAP = 12
EXHAUSTIVE_CAP = 7


@dataclass(frozen=True, eq=False)
class TreeMRF:
    tree: SpanningTree
    weights: np.ndarray  # distance per original edge index
    f: np.ndarray  # (N,) confidences
    beta: float = 0.0
    phi_scale: float = 1.0  # global factor on every unary entry; cancels in Z

    @property
    def n_nodes(self) -> int:
        return self.tree.n_nodes

    @classmethod
    def plain(cls, tree: SpanningTree, weights) -> "TreeMRF":
        """phi == 1: unit confidences and no path penalty."""
        return cls(tree, np.asarray(weights, dtype=np.float64), np.ones(tree.n_nodes), 0.0)

    def subtrees(self, root: int) -> tuple[SpanningTree, list[set]]:
        rooted = self.tree.rerooted(root)
        below = [{v} for v in range(self.n_nodes)]
        for v in rooted.order[::-1][:-1]:
            below[rooted.parent[v]] |= below[v]
        return rooted, below

    def factor_tables(self, root: int):
        """Unary table (N, N) and {(parent, child): pairwise table (N, N)} for ``root``."""
        n = self.n_nodes
        rooted, below = self.subtrees(root)
        unary = np.ones((n, n))
        for k in range(n):
            for h in below[k] - {k}:
                unary[k, h] = np.exp(-self.beta)
            unary[k, k] = self.f[k]
        unary *= self.phi_scale
        pairwise = {}
        for c in rooted.order[1:]:
            p = rooted.parent[c]
            table = np.eye(n)
            for h in below[c]:
                table[h, h] = np.exp(-self.weights[rooted.parent_edge[c]])
            pairwise[(int(p), int(c))] = table
        return unary, pairwise

    def partition(self, root: int) -> float:
        return float(_config_weights(self, root).sum())


def _config_weights(mrf: TreeMRF, root: int) -> np.ndarray:
    """Joint weight of each delta-consistent configuration h = (u, ..., u)."""
    unary, pairwise = mrf.factor_tables(root)
    n = mrf.n_nodes
    weights = np.empty(n)
    for u in range(n):
        w = 1.0
        for k in range(n):
            w *= unary[k, u]
        for table in pairwise.values():
            w *= table[u, u]
        weights[u] = w
    return weights


def enumerate_marginals(mrf: TreeMRF, root: int, exhaustive: bool = False) -> np.ndarray:
    """P(h_root = j) by summing the joint.

    The delta couplings leave only the N constant configurations with
    non-zero weight; ``exhaustive`` sums over all N**N configurations instead.
    """
    n = mrf.n_nodes
    if not 0 <= root < n:
        raise ValueError(f"root {root} out of range")
    if n > ENUMERATION_CAP:
        raise ValueError(f"{n} nodes exceeds the enumeration cap {ENUMERATION_CAP}")
    if not exhaustive:
        w = _config_weights(mrf, root)
        return w / w.sum()
    if n > EXHAUSTIVE_CAP:
        raise ValueError(f"{n} nodes exceeds the exhaustive cap {EXHAUSTIVE_CAP}")
    unary, pairwise = mrf.factor_tables(root)
    configs = np.array(list(itertools.product(range(n), repeat=n)))
    w = np.ones(len(configs))
    for k in range(n):
        w *= unary[k, configs[:, k]]
    for (p, c), table in pairwise.items():
        w *= table[configs[:, p], configs[:, c]]
    marg = np.bincount(configs[:, root], weights=w, minlength=n)
    return marg / marg.sum()


def belief_propagation_marginals(mrf: TreeMRF, root: int) -> np.ndarray:
    """Sum-product messages toward ``root``:
    m_{j->i}(h_i) = sum_{h_j} phi_j(h_j) psi(h_i, h_j) prod_{k child of j} m_{k->j}(h_j).
    """
    n = mrf.n_nodes
    if not 0 <= root < n:
        raise ValueError(f"root {root} out of range")
    unary, pairwise = mrf.factor_tables(root)
    rooted = mrf.tree.rerooted(root)
    incoming = np.ones((n, n))  # product of messages into node k, indexed by h_k
    for c in rooted.order[::-1][:-1]:
        p = rooted.parent[c]
        belief = unary[c] * incoming[c]
        incoming[p] *= pairwise[(int(p), int(c))] @ belief
    marg = unary[root] * incoming[root]
    return marg / marg.sum()


@dataclass(frozen=True)
class LemmaReport:
    name: str
    passed: bool
    residual: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<8} {status}  residual={self.residual:.3e}  {self.detail}"


def _group_graph(graph: GridGraph, group: int) -> GridGraph:
    return graph.with_weights(graph.weights[:, group])


def filtering_weights(graph: GridGraph, tree: SpanningTree, group: int = 0) -> np.ndarray:
    """(N, N) matrix W[i, j] of plain tree-filter weights, via the DP on one-hot inputs."""
    n = graph.n_nodes
    eye = FeatureMap(np.eye(n).reshape(graph.height, graph.width, n))
    return forward_v1(eye, tree, _group_graph(graph, group)).output.nodes.copy()


def verify_lemma1(graph: GridGraph, tree: SpanningTree, group: int = 0,
                  tolerance: float = 1e-12, perturb: float = 0.0) -> LemmaReport:
    """MRF marginals with phi == 1 equal the plain filter weights for every root.

    ``perturb`` adds a constant to the filter-side distances (self-test).
    """
    w = graph.weights[:, group]
    mrf = TreeMRF.plain(tree, w)
    filt = filtering_weights(graph.with_weights(w + perturb), tree)
    residual = 0.0
    for i in range(graph.n_nodes):
        residual = max(residual, float(np.abs(enumerate_marginals(mrf, i) - filt[i]).max()))
    return LemmaReport("lemma1", residual <= tolerance, residual, f"{graph.n_nodes} roots")


def verify_lemma2(graph: GridGraph, tree: SpanningTree, group: int = 0,
                  slack: float = 1e-15) -> LemmaReport:
    """Plain-MRF marginals never increase from an ancestor u to a descendant v."""
    mrf = TreeMRF.plain(tree, graph.weights[:, group])
    worst = -np.inf
    pairs = 0
    for i in range(graph.n_nodes):
        p = enumerate_marginals(mrf, i)
        _, below = mrf.subtrees(i)
        for u in range(graph.n_nodes):
            for v in below[u] - {u}:
                worst = max(worst, p[v] - p[u])
                pairs += 1
    if pairs == 0:
        worst = 0.0
    return LemmaReport("lemma2", worst <= slack, max(worst, 0.0),
                       f"{pairs} ancestor/descendant pairs, max P(v)-P(u)={worst:.3e}")


def lemma3_witness(beta: float = 0.0) -> TreeMRF:
    """Path a-b-c with zero distances and confidences (0.5, 0.1, 0.9)."""
    tree = root_tree(3, [(0, 1, 0), (1, 2, 1)], 0)
    return TreeMRF(tree, np.zeros(2), np.array([0.5, 0.1, 0.9]), beta)


def verify_lemma3(beta: float = 0.0, tolerance: float = 1e-12) -> LemmaReport:
    """The witness puts more weight on the distant c than on the nearby b."""
    mrf = lemma3_witness(beta)
    p = enumerate_marginals(mrf, 0)
    condition = mrf.f[2] / mrf.f[1] * np.exp(-(mrf.weights[1] + beta))
    passed = bool(p[2] > p[1] and condition > 1)
    residual = 0.0
    if beta == 0.0:
        residual = float(np.abs(p - np.array([1 / 3, 1 / 15, 3 / 5])).max())
        passed = passed and residual <= tolerance
    detail = f"P(a)={p[0]:.6f} P(b)={p[1]:.6f} P(c)={p[2]:.6f} ratio={condition:.3f}"
    return LemmaReport("lemma3", passed, residual, detail)


def random_instance(rng: np.random.Generator, max_nodes: int = 10, tree_mode: str = "mst"):
    """A small grid with random distances and a spanning tree over it."""
    from .spanning import build_trees

    while True:
        h, w = (int(v) for v in rng.integers(1, max_nodes + 1, size=2))
        if 2 <= h * w <= max_nodes:
            break
    grid = build_grid(h, w)
    graph = grid.with_weights(rng.exponential(1.0, grid.n_edges))
    tree = build_trees(graph, tree_mode, seed=int(rng.integers(1 << 31)))[0]
    return graph, tree
