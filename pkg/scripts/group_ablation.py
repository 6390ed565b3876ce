"""RMSE for every nonempty subset of the high/medium/low confidence groups.

Seven full trainings; about two minutes at the default sizes.
"""

import argparse
import csv
import logging
import sys

from autoeval.harness import benchmark_corpora, group_ablation
from autoeval.regressor import TrainConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--num-train", type=int, default=300)
    ap.add_argument("--num-test", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--group-mode", default="quantile", choices=["quantile", "fixed"])
    ap.add_argument("--out", help="CSV path (default: stdout)")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)

    train_c, test_c = benchmark_corpora(args.num_train, args.num_test, seed=args.seed)
    rows = group_ablation(train_c, test_c, TrainConfig(epochs=args.epochs, seed=args.seed), args.group_mode)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh)
    w.writerow(["groups", "overall_rmse_pct", "category_rmse_pct"])
    for r in rows:
        w.writerow(["+".join(r["groups"]), f"{r['overall_rmse_pct']:.3f}", f"{r['category_rmse_pct']:.3f}"])
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
