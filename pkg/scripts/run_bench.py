"""Runtime scaling of tree construction plus filtering, against nodes and channels.

    python3 scripts/run_bench.py --schedule levels
"""
import argparse

from treefilter.bench import run_channel_bench, run_scaling_bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sides", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--groups", type=int, default=1)
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--schedule", choices=["sequential", "levels"], default="sequential")
    args = ap.parse_args()

    report = run_scaling_bench([(s, s) for s in args.sides], args.channels, args.groups,
                               args.repeats, args.schedule)
    print(report.csv(), end="")
    print(f"# slope vs nodes: {report.slope:.3f}")

    chans = [4, 8, 16, 32, 64]
    times, slope = run_channel_bench(chans, repeats=args.repeats)
    for c, t in zip(chans, times):
        print(f"# channels={c:<3} median_ns={t}")
    print(f"# slope vs channels: {slope:.3f}")


if __name__ == "__main__":
    main()
