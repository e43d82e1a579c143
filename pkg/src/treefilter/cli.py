"""Command-line entry point: ``treefilter <subcommand> ...``.

Exit codes: 0 success, 1 verification failure, 2 usage or file error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .feature_map import FeatureMap, FmapError, ImageFormatError, from_image, load_fmap, save_fmap, to_image, write_image
from .grid_graph import UnaryParams, build_grid, edge_weights, unary_values
from .spanning import build_trees, write_edge_list
from .tree_filter import AFFINITY_MODES, affinity_map, forward_v1, forward_v2

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_GROUPS = 16


class UsageError(Exception):
    pass


def _load(path) -> FeatureMap:
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    if str(path).lower().endswith(".fmap"):
        return load_fmap(path)
    return from_image(path)


def _save(fmap: FeatureMap, path) -> None:
    if str(path).lower().endswith(".fmap"):
        save_fmap(fmap, path)
    else:
        to_image(fmap, path)


def _resolve_groups(channels: int, groups: int) -> int:
    if groups < 1:
        raise UsageError("--groups must be positive")
    if channels % groups == 0:
        return groups
    clamped = channels if groups > channels else math.gcd(groups, channels)
    warnings.warn(f"{groups} groups do not divide {channels} channels; using {clamped}")
    return clamped


def _setup(args):
    """Input map, self-guided graph and one tree per group."""
    x = _load(args.input)
    x = x.with_groups(_resolve_groups(x.channels, args.groups))
    guide = FeatureMap(args.scale * x.data, groups=x.groups)
    graph = edge_weights(guide, build_grid(x.height, x.width, x.groups))
    trees = build_trees(graph, args.tree, args.seed)
    params = UnaryParams(np.full((x.groups, x.group_width), args.pi), np.full(x.groups, args.beta))
    return x, graph, trees, params


def cmd_filter(args) -> int:
    x, graph, trees, params = _setup(args)
    if args.version == "v1":
        state = forward_v1(x, trees, graph, threads=args.threads)
    else:
        state = forward_v2(x, trees, graph, unary_values(x, params), params.beta,
                           threads=args.threads)
    _save(state.output, args.output)
    return EXIT_OK


def cmd_affinity(args) -> int:
    x, graph, trees, params = _setup(args)
    mx, my = args.mark
    if not (0 <= mx < x.width and 0 <= my < x.height):
        raise UsageError(f"mark ({mx}, {my}) outside {x.width}x{x.height} image")
    if not 0 <= args.group < x.groups:
        raise UsageError(f"--group must be below {x.groups}")
    node = my * x.width + mx
    f = unary_values(x, params)
    state = forward_v2(x, trees, graph, f, params.beta)
    for mode in AFFINITY_MODES:
        amap = affinity_map(state, trees, graph, f, params.beta, node, mode)
        name = mode.split("-")[0]
        if args.raw:
            save_fmap(amap, f"{args.output}_{name}.fmap")
        plane = amap.data[:, :, args.group]
        heat = np.rint(plane / plane.max() * 255.0).astype(np.uint8)
        write_image(heat, f"{args.output}_{name}.pgm")
    return EXIT_OK


def cmd_tree(args) -> int:
    x, graph, trees, _ = _setup(args)
    if not 0 <= args.group < x.groups:
        raise UsageError(f"--group must be below {x.groups}")
    write_edge_list(trees[args.group], args.output)
    return EXIT_OK


def _write_text(text: str, output) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_bench(args) -> int:
    from .bench import run_scaling_bench

    sizes = [(s, s) for s in args.sizes]
    report = run_scaling_bench(sizes, args.channels, args.groups, args.repeats, args.schedule)
    _write_text(report.csv(), args.output)
    print(f"log-log slope: {report.slope:.3f}", file=sys.stderr)
    return EXIT_OK


def _toy(args):
    from .toy_learner import ToyTask, TrainConfig

    task = ToyTask(height=args.size, width=args.size, channels=args.channels,
                   n_regions=args.regions, noise_sigma=args.sigma, seed=args.seed)
    config = TrainConfig(steps=args.steps, learning_rate=args.lr, tree_mode=args.tree_mode,
                         sample_seed=args.sample_seed, groups=args.groups)
    return task, config


def cmd_train_toy(args) -> int:
    from .toy_learner import train

    task, config = _toy(args)
    result = train(task, config)
    lines = ["step,loss"] + [f"{i},{loss:.10g}" for i, loss in enumerate(result.losses)]
    _write_text("\n".join(lines) + "\n", args.output)
    print(f"validation loss {result.initial_val_loss:.6g} -> {result.final_val_loss:.6g} "
          f"(unfiltered {result.unfiltered_loss:.6g})", file=sys.stderr)
    return EXIT_OK


def cmd_compare_trees(args) -> int:
    from .toy_learner import compare_tree_modes

    task, config = _toy(args)
    summary = compare_tree_modes(task, config, args.seeds)
    _write_text(summary.csv(), args.output)
    for mode, mean in summary.means.items():
        print(f"{mode:<17} mean final loss {mean:.6g}", file=sys.stderr)
    print(f"{'unfiltered':<17} mean loss       {summary.mean_unfiltered:.6g}", file=sys.stderr)
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    from .gradients import gradient_suite

    worst = {}
    ok = True
    for _, report in gradient_suite(args.configs, args.seed, args.h, args.tolerance):
        ok &= report.passed
        for name, err in report.errors.items():
            worst[name] = max(worst.get(name, 0.0), err)
    print(f"{'parameter':<12} {'max_rel_err':>12}  status")
    for name, err in worst.items():
        print(f"{name:<12} {err:12.3e}  {'ok' if err < args.tolerance else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify_lemmas(args) -> int:
    from .mrf_oracle import (TreeMRF, belief_propagation_marginals, enumerate_marginals,
                             random_instance, verify_lemma1, verify_lemma2, verify_lemma3)
    from .gradients import gradient_suite
    from .tree_filter import forward_bruteforce

    rng = np.random.default_rng(args.seed)
    worst = {"lemma1": 0.0, "lemma2": 0.0, "oracle": 0.0, "bp": 0.0}
    passed = {"lemma1": True, "lemma2": True}
    for k in range(args.instances):
        graph, tree = random_instance(rng, 10, "mst" if k % 2 == 0 else "random")
        r1 = verify_lemma1(graph, tree, tolerance=args.tolerance, perturb=args.perturb)
        r2 = verify_lemma2(graph, tree)
        worst["lemma1"] = max(worst["lemma1"], r1.residual)
        worst["lemma2"] = max(worst["lemma2"], r2.residual)
        passed["lemma1"] &= r1.passed
        passed["lemma2"] &= r2.passed
        f = rng.uniform(0.05, 0.95, graph.n_nodes)
        beta = float(rng.uniform(-1.0, 2.0))
        mrf = TreeMRF(tree, graph.weights[:, 0], f, beta)
        x = FeatureMap(rng.normal(size=(graph.height, graph.width, 2)))
        fast = forward_v2(x, tree, graph, f[:, None], beta)
        slow = forward_bruteforce(x, tree, graph, f[:, None], beta)
        worst["oracle"] = max(worst["oracle"], float(np.abs(fast.output.data - slow.output.data).max()))
        for root in range(graph.n_nodes):
            d = np.abs(belief_propagation_marginals(mrf, root) - enumerate_marginals(mrf, root)).max()
            worst["bp"] = max(worst["bp"], float(d))
    lines = [
        ("lemma1", passed["lemma1"], worst["lemma1"]),
        ("lemma2", passed["lemma2"], worst["lemma2"]),
        ("oracle", worst["oracle"] <= args.oracle_tolerance, worst["oracle"]),
        ("bp", worst["bp"] <= args.tolerance, worst["bp"]),
    ]
    r3 = verify_lemma3()
    lines.append(("lemma3", r3.passed and r3.residual <= args.tolerance, r3.residual))
    ok = True
    for name, good, residual in lines:
        ok &= bool(good)
        print(f"{name:<8} {'PASS' if good else 'FAIL'}  worst residual {residual:.3e}")
    if not args.skip_gradients:
        reports = [r for _, r in gradient_suite(args.gradient_configs, args.seed, 1e-5, 1e-4)]
        grads_ok = all(r.passed for r in reports)
        worst_grad = max((r.worst for r in reports), default=0.0)
        ok &= grads_ok
        print(f"{'grads':<8} {'PASS' if grads_ok else 'FAIL'}  worst relative error {worst_grad:.3e}")
    return EXIT_OK if ok else EXIT_FAIL


def _add_image_options(p, tree_default="mst"):
    p.add_argument("input", help="PGM/PPM image or .fmap file")
    p.add_argument("output")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--pi", type=float, default=0.0, help="fill value for the unary projection")
    p.add_argument("--groups", type=int, default=DEFAULT_GROUPS)
    p.add_argument("--tree", choices=["mst", "random"], default=tree_default)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="guidance scale before edge distances")
    p.add_argument("--threads", type=int, default=1)


def _add_toy_options(p):
    p.add_argument("--size", type=int, default=24)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--regions", type=int, default=6)
    p.add_argument("--sigma", type=float, default=0.15)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=8.0)
    p.add_argument("--tree-mode", choices=["mst", "learnable-random"], default="mst")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--groups", type=int, default=1)
    p.add_argument("--output", "-o", default=None, help="CSV path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treefilter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="structure-preserving smoothing of an image")
    _add_image_options(p)
    p.add_argument("--version", choices=["v1", "v2"], default="v2")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("affinity", help="unary / pairwise / full affinity heatmaps at a pixel")
    _add_image_options(p)
    p.add_argument("--mark", type=int, nargs=2, metavar=("X", "Y"), required=True)
    p.add_argument("--group", type=int, default=0)
    p.add_argument("--raw", action="store_true", help="also dump raw probabilities as FMAP")
    p.set_defaults(func=cmd_affinity)

    p = sub.add_parser("tree", help="dump a spanning tree as a sorted edge list")
    _add_image_options(p)
    p.add_argument("--group", type=int, default=0)
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("bench", help="runtime scaling of MST + filtering")
    p.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--groups", type=int, default=1)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--schedule", choices=["sequential", "levels"], default="sequential")
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-toy", help="train the filter on a synthetic denoising task")
    _add_toy_options(p)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("compare-trees", help="MST vs learnable random tree training")
    _add_toy_options(p)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_compare_trees)

    p = sub.add_parser("check-gradients", help="backward pass vs central differences")
    p.add_argument("--configs", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_gradients)

    p = sub.add_parser("verify-lemmas", help="MRF lemmas, oracle equivalence and gradients")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-12)
    p.add_argument("--oracle-tolerance", type=float, default=1e-10)
    p.add_argument("--perturb", type=float, default=0.0,
                   help="corrupt filter-side distances (self-test; should fail)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gradient-configs", type=int, default=3)
    p.add_argument("--skip-gradients", action="store_true")
    p.set_defaults(func=cmd_verify_lemmas)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, FmapError, ImageFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
