"""Desk-scale two-agent campaign (all four methods) and its Table-1 style summary.

    python scripts/desk_campaign.py [--out runs/desk] [--threads 1] [--full]

``--full`` uses the bundled config unchanged (K = 250, 1000 tuning
episodes, 200 test episodes); expect hours on one core.
"""
import argparse
from importlib.resources import files

from endoshift.campaign import run_campaign
from endoshift.config import load_config

DESK = dict(K=100, K_tune=100, n_tune=200, n_test=50, max_iterations=8)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--config", default=str(files("endoshift") / "configs" / "two_agent.cfg"))
    ap.add_argument("--full", action="store_true")
    args = ap.parse_args()

    cfg = load_config(args.config)
    if not args.full:
        cfg = cfg.with_overrides(**DESK)
    res = run_campaign(cfg, args.out, threads=args.threads)
    print()
    print(f"{'method':6s} {'coll%':>6s} {'succ%':>6s} {'miss%':>6s} {'dev_ego':>8s} {'nav_s':>6s}")
    for method, m in res.metrics.items():
        miss = "-" if m.misdetection_rate is None else f"{m.misdetection_rate:.1f}"
        nav = "-" if m.avg_nav_time is None else f"{m.avg_nav_time:.2f}"
        print(f"{method:6s} {m.collision_rate:6.1f} {m.success_rate:6.1f} {miss:>6s} {m.deviation_ego:8.3f} {nav:>6s}")
    for method, rep in res.reports.items():
        print(f"{method}: dq per round {[round(r.dq, 3) for r in rep.records]}")


if __name__ == "__main__":
    main()
