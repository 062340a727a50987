"""ICP smoothing sweep over gamma in {0.2, 0.8, 0.9} at desk scale.

    python scripts/gamma_sweep.py [--out runs/gamma_sweep] [--values 0.2,0.8,0.9]
"""
import argparse
from importlib.resources import files

from endoshift.campaign import run_sweep
from endoshift.config import load_config

DESK = dict(K=100, K_tune=100, n_tune=200, n_test=50, max_iterations=12, method="icp")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/gamma_sweep")
    ap.add_argument("--values", default="0.2,0.8,0.9")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    cfg = load_config(files("endoshift") / "configs" / "two_agent.cfg").with_overrides(**DESK)
    values = [float(v) for v in args.values.split(",")]
    results = run_sweep(cfg, "gamma", values, args.out, threads=args.threads)
    for g, res in results.items():
        rep = res.reports["icp"]
        m = res.metrics["icp"]
        print(f"gamma={g}: rounds={rep.iterations} converged={rep.converged} "
              f"collision={m.collision_rate:.1f}% misdetection={m.misdetection_rate:.1f}% "
              f"dq={[round(r.dq, 3) for r in rep.records]}")


if __name__ == "__main__":
    main()
