"""Empirical check of the calibration-conditional coverage bound.

Draws many calibration sets from a fixed score distribution, measures the
true coverage of each calibrated threshold, and compares the fraction of
draws whose coverage clears the Beta lower bound with 1 - delta.

    python scripts/coverage_check.py [--K 250] [--eps 0.15] [--delta 0.01] [--draws 4000]
"""
import argparse

import numpy as np

from endoshift.conformal import calibrate, coverage_lower_bound


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--K", type=int, default=250)
    ap.add_argument("--eps", type=float, default=0.15)
    ap.add_argument("--delta", type=float, default=0.01)
    ap.add_argument("--draws", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    bound = coverage_lower_bound(args.K, args.eps, args.delta)
    # uniform scores: the coverage of threshold q is exactly q
    cover = np.array([calibrate(rng.uniform(size=(args.K, 1)), args.eps).values[0] for _ in range(args.draws)])
    cover = np.minimum(cover, 1.0)
    frac = float(np.mean(cover >= bound))
    print(f"bound {bound:.4f}; mean coverage {cover.mean():.4f} (nominal {1 - args.eps:.2f})")
    print(f"P[coverage >= bound] = {frac:.4f} (target >= {1 - args.delta:.2f})")


if __name__ == "__main__":
    main()
