"""Runtime scaling of MST construction plus filtering."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .feature_map import FeatureMap
from .grid_graph import build_grid, edge_weights
from .spanning import build_trees
from .tree_filter import forward_v2

MIN_RESOLVABLE_NS = 2_000


@dataclass(frozen=True)
class BenchReport:
    n_nodes: list
    median_ns: list
    edge_visits: list  # total DP edge visits (all groups, both directions)
    slope: float
    channels: int
    groups: int
    repeats: int

    def csv(self) -> str:
        lines = ["n_nodes,median_ns,edge_visits"]
        lines += [f"{n},{t},{v}" for n, t, v in zip(self.n_nodes, self.median_ns, self.edge_visits)]
        return "\n".join(lines) + "\n"


def loglog_slope(n_nodes, times) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(n_nodes, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def _pipeline(x: FeatureMap, schedule: str):
    graph = edge_weights(x, build_grid(x.height, x.width, x.groups))
    trees = build_trees(graph, "mst")
    unary = np.full((x.n_nodes, x.groups), 0.5)
    return forward_v2(x, trees, graph, unary, np.zeros(x.groups), schedule=schedule)


def run_scaling_bench(sizes, channels: int = 16, groups: int = 1, repeats: int = 5,
                      schedule: str = "sequential", seed: int = 0) -> BenchReport:
    """Median wall time of (edge weights, MST, forward) per grid size, with a log-log fit."""
    sizes = [tuple(int(v) for v in s) for s in sizes]
    if repeats < 5:
        raise ValueError("repeats must be at least 5")
    counts = [h * w for h, w in sizes]
    if len(sizes) < 4 or any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("need at least 4 sizes with strictly increasing node counts")
    if counts[-1] < 16 * counts[0]:
        raise ValueError("sizes must span at least 16x in node count")
    rng = np.random.default_rng(seed)
    n_out, t_out, v_out = [], [], []
    for h, w in sizes:
        x = FeatureMap(rng.random((h, w, channels)), groups=groups)
        state = _pipeline(x, schedule)  # warmup, also compiles kernels
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            _pipeline(x, schedule)
            times.append(time.perf_counter_ns() - t0)
        median = int(np.median(times))
        if median < MIN_RESOLVABLE_NS:
            warnings.warn(f"timer cannot resolve {h}x{w}; dropping the point", RuntimeWarning)
            continue
        n_out.append(h * w)
        t_out.append(median)
        v_out.append(int(state.edge_visits.sum()))
    slope = loglog_slope(n_out, t_out) if len(n_out) >= 2 else float("nan")
    return BenchReport(n_out, t_out, v_out, slope, channels, groups, repeats)


def run_channel_bench(channels, size=(128, 128), repeats: int = 5, seed: int = 0):
    """Median forward time (tree fixed, filter only) per channel count, with its log-log slope."""
    channels = [int(c) for c in channels]
    if repeats < 5:
        raise ValueError("repeats must be at least 5")
    if len(channels) < 2 or any(b <= a for a, b in zip(channels, channels[1:])):
        raise ValueError("need at least 2 strictly increasing channel counts")
    h, w = size
    rng = np.random.default_rng(seed)
    guide = FeatureMap(rng.random((h, w, 1)))
    graph = edge_weights(guide, build_grid(h, w))
    trees = build_trees(graph, "mst")
    unary = np.full((h * w, 1), 0.5)
    medians = []
    for c in channels:
        x = FeatureMap(rng.random((h, w, c)))
        forward_v2(x, trees, graph, unary, np.zeros(1))
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            forward_v2(x, trees, graph, unary, np.zeros(1))
            times.append(time.perf_counter_ns() - t0)
        medians.append(int(np.median(times)))
    return medians, loglog_slope(channels, medians)
