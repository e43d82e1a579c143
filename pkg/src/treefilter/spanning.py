"""Spanning trees over grid graphs.

Both constructors share one Boruvka skeleton: every surviving super-vertex
picks an incident edge, picks that would close a cycle are skipped, then the
graph is contracted and flattened (self-loops dropped, parallel edges reduced
to the one with the smallest weight).  ``mst`` picks the lightest edge (ties
broken by edge index), ``sample_random_spanning_tree`` samples the pick with
probability proportional to exp(-w) using the Gumbel-max trick.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .grid_graph import GridGraph

MODE_MIN = 0
MODE_WEIGHTED = 1
MODE_UNIFORM = 2


@dataclass(frozen=True, eq=False)
class SpanningTree:
    n_nodes: int
    tree_edges: np.ndarray  # (N-1, 3): node_a, node_b, original edge index
    root: int
    parent: np.ndarray  # parent[root] == -1
    parent_edge: np.ndarray  # original edge index toward parent, -1 at root
    order: np.ndarray  # breadth-first order, root first
    depth: np.ndarray
    work: int = 0  # incidences scanned while building the tree

    @property
    def levels(self) -> list[np.ndarray]:
        bounds = np.flatnonzero(np.diff(self.depth[self.order])) + 1
        return np.split(self.order, bounds)

    def edge_set(self) -> frozenset:
        return frozenset((int(a), int(b)) for a, b, _ in self.tree_edges)

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edge_set())

    def rerooted(self, root: int) -> "SpanningTree":
        tree = root_tree(self.n_nodes, self.tree_edges, root)
        return SpanningTree(tree.n_nodes, tree.tree_edges, tree.root, tree.parent,
                            tree.parent_edge, tree.order, tree.depth, self.work)


class UnionFind:
    """Disjoint sets with path halving and union by rank."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.count = n

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        self.count -= 1
        return True


@numba.njit(cache=True, nogil=True)
def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


@numba.njit(cache=True, nogil=True)
def _boruvka(n, eu, ev, w, mode, uniforms):
    n_edges = eu.shape[0]
    cu = eu.copy()
    cv = ev.copy()
    cw = w.copy()
    co = np.arange(n_edges)
    ncur = n
    out = np.empty(max(n - 1, 0), dtype=np.int64)
    n_out = 0
    work = 0
    draw = 0
    while ncur > 1:
        m = cu.shape[0]
        if m == 0:
            raise ValueError("graph is disconnected")
        best = np.full(ncur, -1, dtype=np.int64)
        best_key = np.full(ncur, -np.inf)
        for k in range(m):
            for side in range(2):
                s = cu[k] if side == 0 else cv[k]
                work += 1
                if mode == MODE_MIN:
                    b = best[s]
                    if b < 0 or cw[k] < cw[b] or (cw[k] == cw[b] and co[k] < co[b]):
                        best[s] = k
                else:
                    if draw >= uniforms.shape[0]:
                        raise ValueError("random stream exhausted")
                    u = uniforms[draw]
                    draw += 1
                    key = -np.log(-np.log(u))
                    if mode == MODE_WEIGHTED:
                        key -= cw[k]
                    if key > best_key[s]:
                        best_key[s] = key
                        best[s] = k
        uf = np.arange(ncur)
        rank = np.zeros(ncur, dtype=np.int64)
        for s in range(ncur):
            k = best[s]
            if k < 0:
                raise ValueError("graph is disconnected")
            ra = _find(uf, cu[k])
            rb = _find(uf, cv[k])
            if ra == rb:
                continue
            if rank[ra] < rank[rb]:
                ra, rb = rb, ra
            uf[rb] = ra
            if rank[ra] == rank[rb]:
                rank[ra] += 1
            out[n_out] = co[k]
            n_out += 1
        # contract: relabel components 0..k-1
        label = np.full(ncur, -1, dtype=np.int64)
        nnew = 0
        for s in range(ncur):
            r = _find(uf, s)
            if label[r] < 0:
                label[r] = nnew
                nnew += 1
        keys = np.empty(m, dtype=np.int64)
        keep = np.zeros(m, dtype=np.bool_)
        for k in range(m):
            a = label[_find(uf, cu[k])]
            b = label[_find(uf, cv[k])]
            if a != b:
                if a > b:
                    a, b = b, a
                keys[k] = a * nnew + b
                keep[k] = True
        idx = np.flatnonzero(keep)
        idx = idx[np.argsort(keys[idx], kind="mergesort")]
        # flatten: one edge per super-vertex pair, smallest (weight, index)
        nu = np.empty(idx.shape[0], dtype=np.int64)
        nv = np.empty(idx.shape[0], dtype=np.int64)
        nw = np.empty(idx.shape[0])
        no = np.empty(idx.shape[0], dtype=np.int64)
        cnt = -1
        last = -1
        for k in idx:
            key = keys[k]
            if key != last:
                cnt += 1
                last = key
                nu[cnt] = key // nnew
                nv[cnt] = key % nnew
                nw[cnt] = cw[k]
                no[cnt] = co[k]
            elif cw[k] < nw[cnt] or (cw[k] == nw[cnt] and co[k] < no[cnt]):
                nw[cnt] = cw[k]
                no[cnt] = co[k]
        cu = nu[:cnt + 1]
        cv = nv[:cnt + 1]
        cw = nw[:cnt + 1]
        co = no[:cnt + 1]
        ncur = nnew
    return out[:n_out], work


@numba.njit(cache=True, nogil=True)
def _bfs(n, a, b, root):
    deg = np.zeros(n + 1, dtype=np.int64)
    for k in range(a.shape[0]):
        deg[a[k] + 1] += 1
        deg[b[k] + 1] += 1
    start = np.cumsum(deg)
    fill = start[:-1].copy()
    nbr = np.empty(2 * a.shape[0], dtype=np.int64)
    eid = np.empty(2 * a.shape[0], dtype=np.int64)
    for k in range(a.shape[0]):
        nbr[fill[a[k]]] = b[k]
        eid[fill[a[k]]] = k
        fill[a[k]] += 1
        nbr[fill[b[k]]] = a[k]
        eid[fill[b[k]]] = k
        fill[b[k]] += 1
    parent = np.full(n, -1, dtype=np.int64)
    parent_slot = np.full(n, -1, dtype=np.int64)
    depth = np.full(n, -1, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    depth[root] = 0
    order[0] = root
    head = 0
    tail = 1
    while head < tail:
        v = order[head]
        head += 1
        for s in range(start[v], start[v + 1]):
            u = nbr[s]
            if depth[u] < 0:
                depth[u] = depth[v] + 1
                parent[u] = v
                parent_slot[u] = eid[s]
                order[tail] = u
                tail += 1
    return parent, parent_slot, depth, order, tail


def root_tree(n_nodes: int, edges, root: int = 0) -> SpanningTree:
    """Rooted breadth-first view of a spanning tree edge set.

    ``edges`` holds (a, b) or (a, b, original_edge_index) rows.
    """
    edges = np.asarray(edges, dtype=np.int64)
    if edges.size == 0:
        edges = edges.reshape(0, 3)
    if not 0 <= root < n_nodes:
        raise ValueError(f"root {root} out of range")
    if len(edges) != n_nodes - 1:
        raise ValueError(f"a spanning tree on {n_nodes} nodes needs {n_nodes - 1} edges, got {len(edges)}")
    if edges.shape[1] == 2:
        edges = np.column_stack([edges, np.full(len(edges), -1)])
    a = np.ascontiguousarray(edges[:, 0])
    b = np.ascontiguousarray(edges[:, 1])
    if len(edges) and (a.min() < 0 or b.min() < 0 or max(a.max(), b.max()) >= n_nodes):
        raise ValueError("edge endpoint out of range")
    parent, slot, depth, order, reached = _bfs(n_nodes, a, b, root)
    if reached != n_nodes:
        raise ValueError("edge set is not a spanning tree (disconnected or cyclic)")
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    tree_edges = np.column_stack([lo, hi, edges[:, 2]])
    parent_edge = np.full(n_nodes, -1, dtype=np.int64)
    child = slot >= 0
    parent_edge[child] = tree_edges[slot[child], 2]
    return SpanningTree(n_nodes, tree_edges, root, parent, parent_edge, order, depth)


def _tree_from_edge_ids(graph: GridGraph, ids: np.ndarray, work: int, root: int) -> SpanningTree:
    ids = np.sort(ids)
    ends = graph.edges[ids]
    tree = root_tree(graph.n_nodes, np.column_stack([ends, ids]), root)
    return SpanningTree(tree.n_nodes, tree.tree_edges, tree.root, tree.parent,
                        tree.parent_edge, tree.order, tree.depth, work)


def _group_weights(graph: GridGraph, group: int) -> np.ndarray:
    if graph.n_nodes < 1:
        raise ValueError("empty graph")
    if not 0 <= group < graph.groups:
        raise ValueError(f"group {group} out of range for {graph.groups} groups")
    return np.ascontiguousarray(graph.weights[:, group], dtype=np.float64)


def mst(graph: GridGraph, group: int = 0, root: int = 0) -> SpanningTree:
    w = _group_weights(graph, group)
    ids, work = _boruvka(graph.n_nodes, graph.edges[:, 0].copy(), graph.edges[:, 1].copy(),
                         w, MODE_MIN, np.empty(0))
    return _tree_from_edge_ids(graph, ids, work, root)


def _stream(seed, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random(n)
    # Gumbel transform needs u in (0, 1)
    u[u == 0.0] = np.nextafter(0.0, 1.0)
    return u


def sample_random_spanning_tree(graph: GridGraph, group: int = 0, rng_seed=0,
                                root: int = 0, uniform: bool = False) -> SpanningTree:
    """Close random spanning tree; ``uniform=True`` ignores the weights."""
    w = _group_weights(graph, group)
    # picks per round scan 2|E_r| incidences; contracted planar graphs keep
    # |E_r| <= 3|V_r| and |V_r| at least halves, so 2|E| + 6N draws suffice
    n_draws = 2 * graph.n_edges + 6 * graph.n_nodes + 16
    mode = MODE_UNIFORM if uniform else MODE_WEIGHTED
    ids, work = _boruvka(graph.n_nodes, graph.edges[:, 0].copy(), graph.edges[:, 1].copy(),
                         w, mode, _stream(rng_seed, n_draws))
    return _tree_from_edge_ids(graph, ids, work, root)


def build_trees(graph: GridGraph, mode: str = "mst", seed=0, root: int = 0) -> list[SpanningTree]:
    """One tree per weight group; ``mode`` is "mst", "random" or "uniform"."""
    trees = []
    for g in range(graph.groups):
        if mode == "mst":
            trees.append(mst(graph, g, root))
        elif mode in ("random", "learnable-random", "uniform"):
            trees.append(sample_random_spanning_tree(
                graph, g, rng_seed=(seed, g), root=root, uniform=mode == "uniform"))
        else:
            raise ValueError(f"unknown tree mode {mode!r}")
    return trees


def is_spanning_tree(n_nodes: int, edges) -> bool:
    """Union-find check: n-1 edges, no cycle, one component."""
    edges = list(edges)
    if len(edges) != n_nodes - 1:
        return False
    uf = UnionFind(n_nodes)
    for e in edges:
        if not uf.union(int(e[0]), int(e[1])):
            return False
    return uf.count == 1


def write_edge_list(tree: SpanningTree, path) -> None:
    with open(path, "w") as fh:
        for a, b in tree.edge_list():
            fh.write(f"{a} {b}\n")
