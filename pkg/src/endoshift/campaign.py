"""End-to-end campaigns: predictor tuning, calibration methods, test evaluation.

Artifacts written by :func:`run_campaign` into ``out``::

    config.cfg            resolved config (parses back to the same object)
    manifest.json         config hash, seed streams, package versions, file list
    predictor.json        predictor fitted on the tuning episodes
    metrics.csv/.json     one test-set row per method
    <method>/             iterations.csv, misdetection_per_step.csv,
                          q_over_horizon.csv, shift.csv, q_agent<i>.csv,
                          predictor.json, test_misdetection_per_step.csv

No file contains timestamps or thread counts, so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import METHODS, ExperimentConfig, config_hash, dump_config, load_config
from .conformal import read_quantiles_csv, write_quantiles_csv
from .iterate import (
    IterationReport,
    SimEnvironment,
    evaluate_policy,
    run_bcp,
    run_icp,
    run_iscp,
    write_iterations_csv,
    write_misdetection_csv,
    write_quantiles_over_horizon_csv,
)
from .analysis import write_shift_csv
from .metrics import MetricsReport, write_table_csv
from .predictor import PredictorModel, constant_velocity, fit, load_model, save_model
from .sim import STREAM_BCP, STREAM_CAL, STREAM_ISCP_TUNE, STREAM_TEST, STREAM_TUNE, generate_scenario, episode_seed


@dataclass
class CampaignResult:
    config: ExperimentConfig
    metrics: dict = field(default_factory=dict)  # method -> MetricsReport
    reports: dict = field(default_factory=dict)  # method -> IterationReport
    test_logs: dict = field(default_factory=dict)  # method -> list[EpisodeLog]
    predictor: PredictorModel | None = None


def plan_summary(cfg: ExperimentConfig, out) -> str:
    """Human-readable plan printed by ``--dry-run``."""
    lines = [f"output: {out}", f"config hash: {config_hash(cfg)}"]
    methods = cfg.methods()
    if any(m in methods for m in ("ncp", "bcp", "icp")):
        lines.append(f"tune: {cfg.n_tune} episodes (no tightening, constant-velocity predictor)")
    for m in methods:
        if m == "ncp":
            lines.append("ncp: no calibration")
        elif m == "icp":
            lines.append(f"icp: up to {cfg.max_iterations} rounds x {cfg.K} episodes, gamma={cfg.gamma_icp}, phi={cfg.phi_m}")
        elif m == "bcp":
            budget = cfg.bcp_episodes or ("r_icp * K" if "icp" in methods else f"{4 * cfg.K}")
            lines.append(f"bcp: one round of {budget} episodes")
        elif m == "iscp":
            lines.append(
                f"iscp: up to {cfg.max_iterations} rounds x ({cfg.K_tune} tune + {cfg.K} cal) episodes, gamma={cfg.gamma_iscp}"
            )
    lines.append(f"test: {cfg.n_test} episodes per method, test seed {cfg.test_seed}")
    return "\n".join(lines)


def _write_report(report: IterationReport, d: Path) -> None:
    d.mkdir(parents=True, exist_ok=True)
    write_iterations_csv(d / "iterations.csv", report)
    write_misdetection_csv(d / "misdetection_per_step.csv", report)
    write_quantiles_over_horizon_csv(d / "q_over_horizon.csv", report)
    write_shift_csv(d / "shift.csv", report.shift or {})


def _write_method(d: Path, q_by_agent: dict, predictor: PredictorModel, rep: MetricsReport) -> None:
    d.mkdir(parents=True, exist_ok=True)
    for agent, q in sorted(q_by_agent.items()):
        write_quantiles_csv(d / f"q_agent{agent}.csv", q)
    save_model(predictor, d / "predictor.json")
    if rep.misdetection_per_step is not None:
        with open(d / "test_misdetection_per_step.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "misdetection_pct"])
            for k, x in enumerate(rep.misdetection_per_step, start=1):
                w.writerow([k, repr(float(x))])


def _write_metrics(out: Path, metrics: dict, name: str = "metrics") -> None:
    metrics = {m: metrics[m] for m in METHODS if m in metrics}
    write_table_csv(out / f"{name}.csv", list(metrics.items()))
    with open(out / f"{name}.json", "w") as fh:
        json.dump({m: json.loads(r.to_json()) for m, r in metrics.items()}, fh, indent=1)


def versions() -> dict:
    import numba

    return {"endoshift": __version__, "numpy": np.__version__, "numba": numba.__version__,
            "python": platform.python_version()}


def _manifest(cfg: ExperimentConfig, out: Path, extra: dict | None = None) -> None:
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_hash": config_hash(cfg),
        "config": dump_config(cfg),
        "seeds": {
            "root": cfg.seed,
            "test": cfg.test_seed,
            "streams": {"tune": STREAM_TUNE, "cal": STREAM_CAL, "test": STREAM_TEST, "bcp": STREAM_BCP,
                        "iscp_tune": STREAM_ISCP_TUNE},
        },
        "versions": versions(),
        "files": files,
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def tune_predictor(cfg: ExperimentConfig, env: SimEnvironment) -> PredictorModel:
    """Fit the shared predictor on untightened episodes driven by constant-velocity forecasts."""
    logs = env.run(cfg.n_tune, STREAM_TUNE, 0, env.policies({}, constant_velocity(), cp_agents=()))
    return fit([ep.positions for ep in logs], cfg.window, cfg.ridge)


def run_campaign(cfg: ExperimentConfig, out, threads: int = 1, log=print) -> CampaignResult:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(cfg))
    methods = cfg.methods()
    icfg = cfg.iteration_config()
    env = SimEnvironment(icfg, cfg.sim_config(), threads)
    res = CampaignResult(cfg)

    def evaluate(method, q, predictor, cp_agents=None):
        rep, logs = evaluate_policy(env, q, predictor, cfg.n_test, cfg.test_seed, cp_agents)
        res.metrics[method] = rep
        res.test_logs[method] = logs
        _write_method(out / method, q, predictor, rep)
        log(f"{method}: collision {rep.collision_rate:.1f}%  success {rep.success_rate:.1f}%"
            + ("" if rep.misdetection_rate is None else f"  misdetection {rep.misdetection_rate:.1f}%"))

    predictor = None
    if any(m in methods for m in ("ncp", "bcp", "icp")):
        predictor = tune_predictor(cfg, env)
        save_model(predictor, out / "predictor.json")
        res.predictor = predictor

    if "ncp" in methods:
        evaluate("ncp", {}, predictor, cp_agents=())
    if "icp" in methods:
        rep = run_icp(icfg, predictor, env)
        res.reports["icp"] = rep
        _write_report(rep, out / "icp")
        log(f"icp: {rep.iterations} rounds, converged={rep.converged}")
        evaluate("icp", rep.final_q, predictor)
    if "bcp" in methods:
        n = cfg.bcp_episodes or (res.reports["icp"].iterations * cfg.K if "icp" in res.reports else 4 * cfg.K)
        rep = run_bcp(icfg, predictor, n, env)
        res.reports["bcp"] = rep
        _write_report(rep, out / "bcp")
        evaluate("bcp", rep.final_q, predictor)
    if "iscp" in methods:
        iscp_env = SimEnvironment(cfg.iteration_config(cfg.gamma_iscp), cfg.sim_config(), threads)
        rep = run_iscp(iscp_env.cfg, constant_velocity(), iscp_env)
        res.reports["iscp"] = rep
        _write_report(rep, out / "iscp")
        log(f"iscp: {rep.iterations} rounds, converged={rep.converged}")
        evaluate("iscp", rep.final_q, rep.predictor)

    _write_metrics(out, res.metrics)
    _manifest(cfg, out, {"methods": list(methods),
                         "rounds": {m: r.iterations for m, r in res.reports.items()}})
    return res


def scenario_hashes(cfg: ExperimentConfig, test_seed: int, n: int) -> list[str]:
    import hashlib

    return [
        hashlib.sha256(
            generate_scenario(cfg.n_agents, cfg.diameter_m, episode_seed(test_seed, STREAM_TEST, 0, i)).fingerprint().encode()
        ).hexdigest()
        for i in range(n)
    ]


def evaluate_run(run_dir, test_seed: int, threads: int = 1, log=print) -> dict:
    """Re-evaluate every stored method of a run on the test set of ``test_seed``."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.cfg"
    if not cfg_path.exists():
        raise FileNotFoundError(f"{cfg_path} is missing")
    cfg = load_config(cfg_path)
    env = SimEnvironment(cfg.iteration_config(), cfg.sim_config(), threads)
    out = run_dir / f"evaluate_seed{test_seed}"
    out.mkdir(exist_ok=True)
    metrics = {}
    found = False
    for method in ("ncp", "bcp", "icp", "iscp"):
        d = run_dir / method
        if not (d / "predictor.json").exists():
            continue
        found = True
        predictor = load_model(d / "predictor.json")
        q = {i: read_quantiles_csv(d / f"q_agent{i}.csv") for i in cfg.cp_agents if (d / f"q_agent{i}.csv").exists()}
        cp = () if method == "ncp" else None
        if method != "ncp" and len(q) != len(cfg.cp_agents):
            raise FileNotFoundError(f"{d} lacks stored thresholds")
        rep, _ = evaluate_policy(env, q, predictor, cfg.n_test, test_seed, cp)
        metrics[method] = rep
        log(f"{method}: collision {rep.collision_rate:.1f}%  success {rep.success_rate:.1f}%")
    if not found:
        raise FileNotFoundError(f"no stored method artifacts under {run_dir}")
    _write_metrics(out, metrics)
    with open(out / "scenarios.txt", "w") as fh:
        fh.write("\n".join(scenario_hashes(cfg, test_seed, cfg.n_test)) + "\n")
    return metrics


SWEEP_COLUMNS = ["param", "value", "method", "rounds", "converged", "collision_pct", "misdetection_pct",
                 "success_pct", "avg_nav_time_s"]


def run_sweep(cfg: ExperimentConfig, param: str, values: list, out, threads: int = 1, log=print) -> dict:
    """One campaign per value in ``out/<param>_<value>``, all with the same seeds."""
    if param != "gamma":
        raise ValueError(f"unsupported sweep parameter {param!r} (only 'gamma')")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    children = []
    rows = []
    for v in values:
        child_cfg = cfg.with_overrides(gamma_icp=float(v), gamma_iscp=float(v))
        problems = child_cfg.validate()
        if problems:
            from .config import ConfigError

            raise ConfigError(problems)
        name = f"{param}_{float(v)!r}"
        children.append(name)
        log(f"--- {name}")
        res = run_campaign(child_cfg, out / name, threads, log)
        results[float(v)] = res
        for method, rep in res.metrics.items():
            report = res.reports.get(method)
            tr = rep.table_row(method)
            rows.append({
                "param": param, "value": repr(float(v)), "method": method,
                "rounds": "" if report is None else report.iterations,
                "converged": "" if report is None else report.converged,
                "collision_pct": tr["collision_pct"], "misdetection_pct": tr["misdetection_pct"],
                "success_pct": tr["success_pct"], "avg_nav_time_s": tr["avg_nav_time_s"],
            })
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    with open(out / "sweep_manifest.json", "w") as fh:
        json.dump({"param": param, "values": [float(v) for v in values], "children": children,
                   "base_config_hash": config_hash(cfg)}, fh, indent=1)
    return results
