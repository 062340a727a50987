"""Print per-round score shift and contraction diagnostics of a finished run.

    python scripts/shift_report.py runs/desk [--method icp]
"""
import argparse
import csv
from pathlib import Path


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("run")
    ap.add_argument("--method", default="icp")
    args = ap.parse_args()
    path = Path(args.run) / args.method / "shift.csv"
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        print(f"{path}: fewer than three rounds, no shift estimate")
        return
    print("agent round  W1(r,r+1)  ratio   L_cp")
    for r in rows:
        ratio = f"{float(r['ratio']):.3f}" if r["ratio"] else "-"
        lip = f"{float(r['lipschitz_cp']):.2f}" if r["lipschitz_cp"] else "-"
        print(f"{r['agent']:>5s} {r['iteration']:>5s}  {float(r['w1_pooled']):9.4f}  {ratio:>6s}  {lip:>5s}")


if __name__ == "__main__":
    main()
