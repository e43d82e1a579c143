"""Learnable tree filters over grid feature maps."""
from .feature_map import FeatureMap, load_fmap, save_fmap
from .grid_graph import GridGraph, UnaryParams, build_grid, edge_weights
from .spanning import SpanningTree, build_trees, mst, sample_random_spanning_tree
from .tree_filter import FilterState, forward_bruteforce, forward_v1, forward_v2, transform
from .gradients import backward, finite_difference_check

__all__ = [
    "FeatureMap", "load_fmap", "save_fmap",
    "GridGraph", "UnaryParams", "build_grid", "edge_weights",
    "SpanningTree", "build_trees", "mst", "sample_random_spanning_tree",
    "FilterState", "forward_bruteforce", "forward_v1", "forward_v2", "transform",
    "backward", "finite_difference_check",
]
