"""Reverse-mode derivative of the tree filter and a finite-difference harness.

The tree topology is a constant: gradients reach the edge distances of the
selected tree edges, and from there the input and guided features.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numba
import numpy as np

from .feature_map import FeatureMap
from .grid_graph import UnaryParams, unary_values
from .tree_filter import FilterState, transform


@dataclass(frozen=True)
class GradientBundle:
    d_input: np.ndarray  # (H, W, C)
    d_guided: np.ndarray  # (H, W, C)
    d_pi: np.ndarray  # (groups, C // groups)
    d_beta: np.ndarray  # (groups,)
    d_edge_weights: np.ndarray  # (E, groups)


@numba.njit(cache=True, nogil=True)
def _two_pass_adjoint(order, parent, t, f, x, up, up_den, down, down_den, gy):
    n, c = x.shape
    g_down = np.empty((n, c))
    g_down_den = np.zeros(n)
    for i in range(n):
        inv = 1.0 / down_den[i]
        acc = 0.0
        for k in range(c):
            g_down[i, k] = gy[i, k] * inv
            acc += gy[i, k] * down[i, k] * inv
        g_down_den[i] = -acc * inv
    g_up = np.zeros((n, c))
    g_up_den = np.zeros(n)
    g_t = np.zeros(n)
    # downward pass in reverse: deepest nodes first
    for s in range(n - 1, 0, -1):
        v = order[s]
        p = parent[v]
        tv = t[v]
        one_m = 1.0 - tv * tv
        acc = 0.0
        for k in range(c):
            gd = g_down[v, k]
            g_up[v, k] += one_m * gd
            g_down[p, k] += tv * gd
            acc += gd * (down[p, k] - 2.0 * tv * up[v, k])
        gd = g_down_den[v]
        g_up_den[v] += one_m * gd
        g_down_den[p] += tv * gd
        acc += gd * (down_den[p] - 2.0 * tv * up_den[v])
        g_t[v] += acc
    r = order[0]
    for k in range(c):
        g_up[r, k] += g_down[r, k]
    g_up_den[r] += g_down_den[r]
    # upward pass in reverse: root side first
    for s in range(1, n):
        v = order[s]
        p = parent[v]
        tv = t[v]
        acc = 0.0
        for k in range(c):
            g_up[v, k] += tv * g_up[p, k]
            acc += g_up[p, k] * up[v, k]
        g_up_den[v] += tv * g_up_den[p]
        acc += g_up_den[p] * up_den[v]
        g_t[v] += acc
    g_x = np.empty((n, c))
    g_f = np.empty(n)
    for i in range(n):
        acc = g_up_den[i]
        for k in range(c):
            g_x[i, k] = f[i] * g_up[i, k]
            acc += x[i, k] * g_up[i, k]
        g_f[i] = acc
    return g_x, g_f, g_t


def filter_adjoint(state: FilterState, x: FeatureMap, d_output):
    """Cotangents of (x direct path, unary, per-node transmissions) for a filter run."""
    gy = np.asarray(d_output, dtype=np.float64).reshape(x.n_nodes, x.channels)
    if not np.all(np.isfinite(gy)):
        raise ValueError("d_output must be finite")
    cg = x.group_width
    nodes = x.nodes
    g_x = np.empty_like(gy)
    g_f = np.empty((x.n_nodes, x.groups))
    g_t = np.empty((x.groups, x.n_nodes))
    for g in range(x.groups):
        sl = slice(g * cg, (g + 1) * cg)
        tr = state.trees[g]
        g_x[:, sl], g_f[:, g], g_t[g] = _two_pass_adjoint(
            tr.order, tr.parent, state.transmissions[g], state.unary[:, g].copy(),
            np.ascontiguousarray(nodes[:, sl]),
            np.ascontiguousarray(state.up_num[:, sl]), state.up_den[:, g].copy(),
            np.ascontiguousarray(state.down_num[:, sl]), state.down_den[:, g].copy(),
            np.ascontiguousarray(gy[:, sl]))
    return g_x, g_f, g_t


def _distance_backward(fmap: FeatureMap, edges: np.ndarray, d_w: np.ndarray) -> np.ndarray:
    """Pull edge-distance cotangents (E, G) back to the feature map (N, C)."""
    nodes = fmap.nodes
    cg = fmap.group_width
    diff = nodes[edges[:, 0]] - nodes[edges[:, 1]]
    coef = np.repeat(d_w, cg, axis=1) * diff * (2.0 / cg)
    out = np.zeros_like(nodes)
    np.add.at(out, edges[:, 0], coef)
    np.add.at(out, edges[:, 1], -coef)
    return out


def backward(state: FilterState, params: UnaryParams, x: FeatureMap, g: FeatureMap,
             d_output, joint: bool = True) -> GradientBundle:
    """Gradients of <d_output, Y> for Y = transform(x, g, params, trees=state.trees).

    With ``joint`` the edge distances are w_x + w_g; otherwise only w_g.
    """
    if state.output.data.shape != x.data.shape:
        raise ValueError("state does not match the input feature map")
    if g.data.shape[:2] != x.data.shape[:2]:
        raise ValueError("guided feature size differs from input")
    if g.groups != x.groups:
        g = g.with_groups(x.groups)
    f = unary_values(x, params)
    if f.shape != state.unary.shape or not np.array_equal(f, state.unary):
        raise ValueError("state was not produced from these unary parameters")
    graph = state.graph
    groups, cg = x.groups, x.group_width

    g_x, g_f, g_t = filter_adjoint(state, x, d_output)

    d_w = np.zeros((graph.n_edges, groups))
    d_beta = np.zeros(groups)
    for k in range(groups):
        tr = state.trees[k]
        child = tr.parent_edge >= 0
        d_log_t = state.transmissions[k][child] * g_t[k][child]
        d_w[tr.parent_edge[child], k] -= d_log_t
        d_beta[k] = -d_log_t.sum()

    # unary confidences f = sigmoid(pi . x_slice)
    d_z = g_f * f * (1.0 - f)
    xs = x.nodes.reshape(x.n_nodes, groups, cg)
    d_pi = np.einsum("ng,ngc->gc", d_z, xs)
    g_x = g_x + (d_z[:, :, None] * params.pi[None, :, :]).reshape(x.n_nodes, x.channels)

    d_guided = _distance_backward(g, graph.edges, d_w)
    if joint:
        g_x = g_x + _distance_backward(x, graph.edges, d_w)
    return GradientBundle(
        d_input=g_x.reshape(x.data.shape),
        d_guided=d_guided.reshape(g.data.shape),
        d_pi=d_pi,
        d_beta=d_beta,
        d_edge_weights=d_w,
    )


def extended_transform(x, g, pi, beta, trees, groups: int, joint: bool = True) -> np.ndarray:
    """The filter module recomputed in np.longdouble with the level schedule.

    Serves as the probe for finite differences: double precision leaves about
    1e-10 of roundoff in a central difference with h = 1e-5, which swamps
    gradient components near 1e-8.
    """
    ld = np.longdouble
    x = np.asarray(x, dtype=ld)
    g = np.asarray(g, dtype=ld)
    h, w, c = x.shape
    n, cg = h * w, c // groups
    xn = x.reshape(n, c)
    gn = g.reshape(n, c)
    pi = np.asarray(pi, dtype=ld).reshape(groups, cg)
    beta = np.asarray(beta, dtype=ld).reshape(groups)
    y = np.empty((n, c), dtype=ld)
    for k in range(groups):
        sl = slice(k * cg, (k + 1) * cg)
        tr = trees[k]
        f = 1 / (1 + np.exp(-(xn[:, sl] @ pi[k])))
        child = tr.order[1:]
        par = tr.parent[child]
        dist = np.mean((gn[child, sl] - gn[par, sl]) ** 2, axis=1)
        if joint:
            dist = dist + np.mean((xn[child, sl] - xn[par, sl]) ** 2, axis=1)
        t = np.zeros(n, dtype=ld)
        t[child] = np.exp(-(dist + beta[k]))
        levels = tr.levels
        up = f[:, None] * xn[:, sl]
        up_den = f.copy()
        for nodes in reversed(levels[1:]):
            np.add.at(up, tr.parent[nodes], t[nodes, None] * up[nodes])
            np.add.at(up_den, tr.parent[nodes], t[nodes] * up_den[nodes])
        down, down_den = up.copy(), up_den.copy()
        for nodes in levels[1:]:
            p, tv = tr.parent[nodes], t[nodes]
            down[nodes] = up[nodes] + tv[:, None] * (down[p] - tv[:, None] * up[nodes])
            down_den[nodes] = up_den[nodes] + tv * (down_den[p] - tv * up_den[nodes])
        y[:, sl] = down / down_den[:, None]
    return y.reshape(h, w, c)


class GradientCheckError(RuntimeError):
    pass


@dataclass(frozen=True)
class GradientReport:
    errors: dict  # name -> max relative error
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)

    def table(self) -> str:
        lines = [f"{'parameter':<12} {'max_rel_err':>12}  status"]
        for name, err in self.errors.items():
            lines.append(f"{name:<12} {err:12.3e}  {'ok' if err < self.tolerance else 'FAIL'}")
        return "\n".join(lines)


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(loss: Callable[[dict], float], point: Mapping[str, np.ndarray],
                       h: float = 1e-5) -> dict:
    """Central differences for every scalar of every named parameter.

    Loss values are differenced in whatever precision ``loss`` returns, and
    the divisor is the step actually realized in double precision.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    grads = {}
    for name, value in base.items():
        grad = np.empty_like(value)
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            hi, lo = orig + h, orig - h
            flat[i] = hi
            fp = loss(base)
            flat[i] = lo
            fm = loss(base)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradientCheckError(f"non-finite loss when probing {name}[{i}]")
            grad.reshape(-1)[i] = float((fp - fm) / (hi - lo))
        grads[name] = grad
    return grads


def finite_difference_check(loss: Callable[[dict], float], point: Mapping[str, np.ndarray],
                            analytic: Mapping[str, np.ndarray], h: float = 1e-5,
                            tolerance: float = 1e-4) -> GradientReport:
    numeric = numerical_gradient(loss, point, h)
    errors = {}
    for name, num in numeric.items():
        ana = np.asarray(analytic[name], dtype=np.float64)
        if ana.shape != num.shape:
            raise ValueError(f"gradient for {name} has shape {ana.shape}, expected {num.shape}")
        errors[name] = float(relative_error(ana, num).max()) if num.size else 0.0
    return GradientReport(errors, tolerance)


def gradient_suite(n_configs: int, seed: int = 0, h: float = 1e-5, tolerance: float = 1e-4):
    """Random instances (grids up to 5x5, up to 4 channels, 1 or 2 groups, beta in
    [-0.5, 1], alternating minimum and random trees); yields (index, report).
    """
    rng = np.random.default_rng(seed)
    for k in range(n_configs):
        height, width = (int(v) for v in rng.integers(2, 6, 2))
        groups = int(rng.choice([1, 2]))
        channels = groups * int(rng.integers(1, 3))
        x = rng.normal(size=(height, width, channels))
        g = rng.normal(size=(height, width, channels))
        pi = rng.normal(size=(groups, channels // groups))
        beta = rng.uniform(-0.5, 1.0, groups)
        target = rng.normal(size=x.shape)
        mode = "mst" if k % 2 == 0 else "random"
        params = UnaryParams(pi, beta)
        xf, gf = FeatureMap(x, groups), FeatureMap(g, groups)
        state = transform(xf, gf, params, tree_mode=mode, seed=k)
        grads = backward(state, params, xf, gf, state.output.data - target)
        trees = state.trees

        def loss(p, trees=trees, target=target, groups=groups):
            y = extended_transform(p["x"], p["g"], p["pi"], p["beta"], trees, groups)
            return 0.5 * np.sum((y - target) ** 2)

        report = finite_difference_check(
            loss, {"x": x, "g": g, "pi": pi, "beta": beta},
            {"x": grads.d_input, "g": grads.d_guided, "pi": grads.d_pi, "beta": grads.d_beta},
            h=h, tolerance=tolerance)
        yield k, report
