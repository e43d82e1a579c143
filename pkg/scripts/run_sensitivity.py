"""Sweep noise level and step size to see where the tree-mode ordering holds.

Prints one row per (sigma, lr): mean final losses, their ratio, and the worst
final/initial validation ratio over seeds.
"""
import argparse
import itertools
import warnings

from treefilter.toy_learner import ToyTask, TrainConfig, TrainingDiverged, compare_tree_modes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.1, 0.15, 0.2])
    ap.add_argument("--lrs", type=float, nargs="+", default=[2.0, 4.0, 8.0, 16.0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()

    print("sigma,lr,mst,learnable_random,ratio,worst_cut")
    for sigma, lr in itertools.product(args.sigmas, args.lrs):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                s = compare_tree_modes(ToyTask(noise_sigma=sigma),
                                       TrainConfig(steps=args.steps, learning_rate=lr),
                                       args.seeds)
        except TrainingDiverged as exc:
            print(f"{sigma},{lr},diverged at step {exc.step}")
            continue
        worst = max(final / init for _, _, init, final, _ in s.rows)
        m, r = s.means["mst"], s.means["learnable-random"]
        print(f"{sigma},{lr},{m:.5f},{r:.5f},{r / m:.3f},{worst:.3f}")


if __name__ == "__main__":
    main()
