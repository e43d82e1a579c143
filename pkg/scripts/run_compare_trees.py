"""Minimum vs learnable random spanning trees on the toy denoising task.

    python3 scripts/run_compare_trees.py --seeds 10 --sigma 0.15
"""
import argparse
import logging

from treefilter.toy_learner import ToyTask, TrainConfig, compare_tree_modes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--size", type=int, default=24)
    ap.add_argument("--sigma", type=float, default=0.15)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr", type=float, default=8.0)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    task = ToyTask(height=args.size, width=args.size, noise_sigma=args.sigma)
    summary = compare_tree_modes(task, TrainConfig(steps=args.steps, learning_rate=args.lr),
                                 args.seeds)
    print(f"{'seed':>4} {'mode':<17} {'initial':>9} {'final':>9} {'cut':>6}")
    for seed, mode, init, final, _ in summary.rows:
        print(f"{seed:>4} {mode:<17} {init:9.5f} {final:9.5f} {final / init:6.3f}")
    print()
    for mode, mean in summary.means.items():
        print(f"mean final {mode:<17} {mean:.5f}")
    print(f"mean unfiltered             {summary.mean_unfiltered:.5f}")
    ratio = summary.means["learnable-random"] / summary.means["mst"]
    print(f"learnable-random / mst      {ratio:.3f}  "
          f"({'holds' if summary.direction_holds() else 'fails'} with a 10% margin)")


if __name__ == "__main__":
    main()
