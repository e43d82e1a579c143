"""4-connected grid graphs, grouped edge distances, joint affinities and unary confidences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feature_map import FeatureMap


@dataclass(frozen=True, eq=False)
class GridGraph:
    height: int
    width: int
    edges: np.ndarray  # (E, 2) int64, a < b, lexicographic order
    weights: np.ndarray  # (E, groups) float64, >= 0

    @property
    def n_nodes(self) -> int:
        return self.height * self.width

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def groups(self) -> int:
        return self.weights.shape[1]

    def with_weights(self, weights: np.ndarray) -> "GridGraph":
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim == 1:
            weights = weights[:, None]
        if weights.shape[0] != self.n_edges:
            raise ValueError(f"expected {self.n_edges} edge weights, got {weights.shape[0]}")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("edge weights must be finite and non-negative")
        return GridGraph(self.height, self.width, self.edges, weights)


@dataclass(frozen=True)
class UnaryParams:
    pi: np.ndarray  # (groups, channels // groups)
    beta: np.ndarray  # (groups,)

    def __post_init__(self):
        pi = np.atleast_2d(np.asarray(self.pi, dtype=np.float64))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if beta.shape != (pi.shape[0],):
            raise ValueError(f"beta shape {beta.shape} does not match {pi.shape[0]} groups")
        if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(beta))):
            raise ValueError("unary parameters must be finite")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "beta", beta)

    @property
    def groups(self) -> int:
        return self.pi.shape[0]

    @classmethod
    def zeros(cls, channels: int, groups: int, beta: float = 0.0) -> "UnaryParams":
        if channels % groups:
            raise ValueError("channels must be divisible by groups")
        return cls(np.zeros((groups, channels // groups)), np.full(groups, float(beta)))


def build_grid(height: int, width: int, groups: int = 1) -> GridGraph:
    if height < 1 or width < 1:
        raise ValueError(f"grid dimensions must be positive, got {height}x{width}")
    idx = np.arange(height * width, dtype=np.int64).reshape(height, width)
    right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    down = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    edges = np.concatenate([right, down])
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return GridGraph(height, width, edges, np.zeros((len(edges), groups)))


def _check_shape(fmap: FeatureMap, graph: GridGraph):
    if (fmap.height, fmap.width) != (graph.height, graph.width):
        raise ValueError(
            f"feature map {fmap.height}x{fmap.width} does not match graph {graph.height}x{graph.width}"
        )


def edge_weights(fmap: FeatureMap, graph: GridGraph) -> GridGraph:
    """Per-group mean squared channel difference across every edge."""
    _check_shape(fmap, graph)
    x = fmap.nodes
    diff = x[graph.edges[:, 0]] - x[graph.edges[:, 1]]
    sq = (diff * diff).reshape(len(graph.edges), fmap.groups, fmap.group_width)
    return GridGraph(graph.height, graph.width, graph.edges, sq.mean(axis=2))


def joint_affinity(input_w: GridGraph, guided_w: GridGraph) -> GridGraph:
    """exp(-w_joint) = exp(-w_x) * exp(-w_g), kept in distance space."""
    if (input_w.height, input_w.width) != (guided_w.height, guided_w.width):
        raise ValueError("grid shapes differ")
    if input_w.weights.shape != guided_w.weights.shape:
        raise ValueError(
            f"weight shapes differ: {input_w.weights.shape} vs {guided_w.weights.shape}"
        )
    return GridGraph(input_w.height, input_w.width, input_w.edges, input_w.weights + guided_w.weights)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def unary_values(fmap: FeatureMap, params: UnaryParams) -> np.ndarray:
    """(N, groups) confidences sigmoid(pi_g . x_i[group g])."""
    if params.groups != fmap.groups or params.pi.shape[1] != fmap.group_width:
        raise ValueError(
            f"pi shape {params.pi.shape} does not match {fmap.groups} groups "
            f"of width {fmap.group_width}"
        )
    x = fmap.nodes.reshape(fmap.n_nodes, fmap.groups, fmap.group_width)
    return sigmoid(np.einsum("ngc,gc->ng", x, params.pi))
