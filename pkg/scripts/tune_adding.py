"""Grid search for the adding-problem benchmark.

Usage: python3 scripts/tune_adding.py [--out benchmarks/adding_grid.csv]

Scores every setting in diffrnn.benchmark.DIFFUSION_GRID and SGD_GRID on the
tuning seeds and prints the winners, which are frozen in diffrnn.benchmark.
"""

import argparse

from diffrnn.benchmark import TUNING_SEEDS, tune


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--out", default="benchmarks/adding_grid.csv")
    parser.add_argument("--seeds", default=",".join(map(str, TUNING_SEEDS)))
    args = parser.parse_args()
    seeds = tuple(int(s) for s in args.seeds.split(","))
    best_diff, best_sgd, _ = tune(seeds, csv_path=args.out, progress=lambda row: print(row, flush=True))
    print("best diffusion:", best_diff)
    print("best sgd:", best_sgd)


if __name__ == "__main__":
    main()
