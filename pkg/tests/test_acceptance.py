"""One test per acceptance criterion; each prints a PASS/FAIL line.

The live campaign is a desk-scale version of the bundled two-agent config
(K = 100 per round, 200 tuning episodes, 50 test episodes) run once with one
worker and once with eight.
"""
import math
import time
from importlib.resources import files

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from endoshift.analysis import contraction_estimate, w1_1d
from endoshift.campaign import run_campaign
from endoshift.conformal import QuantileVector, calibrate, coverage_lower_bound, misdetection
from endoshift.config import load_config
from endoshift.dynamics import AgentState, Control, DynamicsParams, step
from endoshift.iterate import ITERATION_COLUMNS, IterationConfig, run_icp
from endoshift.mpc import OPTIMAL_APPROX, MpcProblem, objective_and_gradient, plan
from endoshift.predictor import constant_velocity
from endoshift.stubs import GeometricShiftEnv, ScriptedEnv, StationaryEnv
from endoshift.sim import STREAM_CAL, STREAM_TEST

DESK = dict(K=100, K_tune=100, n_tune=200, n_test=50, max_iterations=8)


def record(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title} -- {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def desk_config():
    return load_config(files("endoshift") / "configs" / "two_agent.cfg").with_overrides(**DESK)


@pytest.fixture(scope="module")
def campaigns(tmp_path_factory):
    cfg = desk_config()
    root = tmp_path_factory.mktemp("campaign")
    t0 = time.perf_counter()
    serial = run_campaign(cfg, root / "t1", threads=1, log=lambda *_: None)
    elapsed = time.perf_counter() - t0
    run_campaign(cfg, root / "t8", threads=8, log=lambda *_: None)
    return {"root": root, "serial": serial, "elapsed": elapsed}


# 1 ------------------------------------------------------------------------------------


def test_criterion_1_quantile_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        K, H = int(rng.integers(1, 51)), int(rng.integers(1, 11))
        eps = float(rng.choice([0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5]))
        # rounded scores force ties
        scores = np.round(rng.exponential(1.0, (K, H)), int(rng.integers(0, 3)))
        got = calibrate(scores, eps).values
        want = [oracles.brute_force_threshold(scores[:, k], eps) for k in range(H)]
        mismatches += not np.array_equal(got, want)
    dt = time.perf_counter() - t0
    record(1, "calibrate equals brute-force oracle", mismatches == 0 and dt < 5,
           f"{mismatches} mismatches in 1000 instances, {dt:.2f}s")


# 2 ------------------------------------------------------------------------------------


def test_criterion_2_marginal_coverage():
    t0 = time.perf_counter()
    bound = 0.15 + 3 * math.sqrt(0.15 * 0.85 / 2000)
    rates = []
    for seed in range(20):
        env = StationaryEnv(seed=seed)
        rng_cal = np.random.default_rng([seed, STREAM_CAL])
        rng_test = np.random.default_rng([seed, STREAM_TEST])
        q = calibrate(env.sample(250, rng_cal), 0.15)
        _, overall = misdetection(env.sample(2000, rng_test), q)
        rates.append(overall)
    ok_seeds = sum(r <= bound for r in rates)
    dt = time.perf_counter() - t0
    record(2, "stationary misdetection within bound", ok_seeds >= 18 and dt < 30,
           f"{ok_seeds}/20 seeds <= {bound:.4f} (max {max(rates):.4f}), {dt:.2f}s")


# 3 ------------------------------------------------------------------------------------


def test_criterion_3_beta_bound():
    t0 = time.perf_counter()
    got = coverage_lower_bound(1000, 0.15, 0.01)
    dt = time.perf_counter() - t0
    want = oracles.beta_lower_bound(1000, 0.15, 0.01)
    # v = floor((K+1) eps) jumps make the bound saw-toothed in K; along K = 20m - 1
    # the ratio v / (K+1) stays at eps and the bound must rise
    grid = [20 * m - 1 for m in range(1, 21)]
    vals = [coverage_lower_bound(K, 0.15, 0.01) for K in grid]
    plateau = [coverage_lower_bound(K, 0.15, 0.01) for K in range(240, 246)]  # v = 36 throughout
    mono = bool(np.all(np.diff(vals) > 0) and np.all(np.diff(plateau) > 0))
    record(3, "coverage bound vs incomplete-beta oracle", abs(got - want) <= 1e-8 and mono and dt < 1,
           f"bound {got:.12f}, oracle {want:.12f}, |diff| {abs(got - want):.1e}, monotone={mono}, {dt * 1e3:.1f}ms")


# 4 ------------------------------------------------------------------------------------


def test_criterion_4_dynamics_and_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    P = DynamicsParams()
    step_err = 0.0
    for _ in range(1000):
        s = (*rng.uniform(-20, 20, 2), rng.uniform(-math.pi, math.pi), rng.uniform(-1, 3))
        u = (rng.uniform(-0.6, 0.6), rng.uniform(-2, 2))
        got = step(AgentState(*s), Control(*u), P).as_array()
        step_err = max(step_err, float(np.max(np.abs(got - oracles.bicycle_step(*s, *u)))))

    grad_err = 0.0
    for _ in range(100):
        H = 10
        s0 = AgentState(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi), rng.uniform(0.3, 2.0))
        prob = MpcProblem(goal=AgentState(*rng.uniform(-5, 5, 2), 0.0, 0.0), horizon=H)
        U = np.column_stack([rng.uniform(-0.4, 0.4, H), rng.uniform(-0.5, 0.5, H)])
        obst = rng.uniform(-3, 3, (2, H, 2))
        q = QuantileVector(rng.uniform(0, 1.0, H))
        _, g = objective_and_gradient(U, s0, obst, q, prob, 100.0)
        fd = np.zeros_like(U)
        for idx in np.ndindex(U.shape):
            up, dn = U.copy(), U.copy()
            up[idx] += 1e-6
            dn[idx] -= 1e-6
            fd[idx] = (objective_and_gradient(up, s0, obst, q, prob, 100.0)[0]
                       - objective_and_gradient(dn, s0, obst, q, prob, 100.0)[0]) / 2e-6
        grad_err = max(grad_err, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8)))
    dt = time.perf_counter() - t0
    record(4, "bicycle step and analytic gradient", step_err <= 1e-12 and grad_err <= 1e-4 and dt < 10,
           f"step max err {step_err:.1e}, gradient max rel err {grad_err:.1e}, {dt:.2f}s")


# 5 ------------------------------------------------------------------------------------


def test_criterion_5_h1_near_optimal():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    ratios = []
    statuses = []
    for _ in range(50):
        s0 = AgentState(*rng.uniform(-1, 1, 2), rng.uniform(-math.pi, math.pi), rng.uniform(0, 2.5))
        goal = AgentState(*rng.uniform(-6, 6, 2), rng.uniform(-2, 2), 0.0)
        prob = MpcProblem(goal=goal, horizon=1)
        nxt = oracles.bicycle_step(*s0.as_array(), 0.0, 0.0)
        ang = rng.uniform(0, 2 * math.pi)
        obstacle = np.array(nxt[:2]) + rng.uniform(0.55, 1.5) * np.array([math.cos(ang), math.sin(ang)])
        grid_cost, _ = oracles.grid_plan_h1(s0.as_array(), goal.as_array(), obstacle, prob.safe_distance)
        res = plan(s0, obstacle[None, None, :], None, prob)
        statuses.append(res.status)
        ratios.append(oracles.mpc_cost(res.states, res.controls, goal.as_array()) / grid_cost)
    dt = time.perf_counter() - t0
    ok = max(ratios) <= 1.05 and all(s == OPTIMAL_APPROX for s in statuses) and dt < 30
    record(5, "H=1 plan vs 41x41 grid", ok, f"worst cost ratio {max(ratios):.4f}, {dt:.2f}s")


# 6 ------------------------------------------------------------------------------------


def test_criterion_6_algorithm_fidelity():
    H, K, eps = 5, 40, 0.15
    worst = 0.0
    for gamma in (0.0, 0.5, 1.0):
        cfg = IterationConfig(K=K, horizon=H, max_iterations=3, phi=0.0, epsilon=eps, gamma=gamma)
        report = run_icp(cfg, constant_velocity(), ScriptedEnv(horizon=H))
        ref = ScriptedEnv(horizon=H)
        q = np.zeros(H)
        assert report.iterations == 3
        for r, rec in enumerate(report.records):
            scores = ref.scores_for({0: QuantileVector(q)}, K, STREAM_CAL, r)[0]
            p = math.ceil((K + 1) * (1 - eps) - 1e-9)
            q_hat = np.sort(scores, axis=0)[p - 1]
            q_next = (1 - gamma) * q + gamma * q_hat
            worst = max(worst,
                        float(np.max(np.abs(rec.q[0].values - q))),
                        float(np.max(np.abs(rec.q_hat[0].values - q_hat))),
                        float(np.max(np.abs(rec.q_next[0].values - q_next))),
                        abs(rec.dq - float(np.linalg.norm(q_hat - q))))
            q = q_next
    record(6, "ICP sequences equal hand composition", worst <= 1e-12,
           f"max deviation {worst:.1e} over 3 rounds x gamma in (0, 0.5, 1)")


# 7 ------------------------------------------------------------------------------------


def test_criterion_7_safety_trend(campaigns):
    m = campaigns["serial"].metrics
    ncp, icp = m["ncp"].collision_rate, m["icp"].collision_rate
    miss = m["icp"].misdetection_rate
    ok = ncp >= 10.0 and icp <= 4.0 and miss <= 25.0 and campaigns["elapsed"] < 15 * 60
    record(7, "NCP unsafe, ICP safe on shared test seeds", ok,
           f"NCP collisions {ncp:.1f}%, ICP collisions {icp:.1f}%, ICP misdetection {miss:.1f}% "
           f"(BCP {m['bcp'].collision_rate:.1f}%, ISCP {m['iscp'].collision_rate:.1f}%), campaign {campaigns['elapsed']:.0f}s")


# 8 ------------------------------------------------------------------------------------


def test_criterion_8_convergence(campaigns):
    cfg = IterationConfig(K=250, horizon=10, max_iterations=5, phi=0.1, gamma=0.8)
    stub = run_icp(cfg, constant_velocity(), StationaryEnv())
    stub_dqs = [rec.dq for rec in stub.records]
    stub_ok = stub.converged and stub_dqs[-1] < 0.1

    run = campaigns["root"] / "t1" / "icp"
    live = campaigns["serial"].reports["icp"]
    header = (run / "iterations.csv").read_text().splitlines()[0].split(",")
    qh = (run / "q_over_horizon.csv").read_text().splitlines()
    schema_ok = header == ITERATION_COLUMNS and len(qh) == 1 + live.iterations * 10
    live_dq = live.records[-1].dq
    live_ok = live.converged and live_dq <= 0.1
    record(8, "dq stopping contract", stub_ok and schema_ok and live_ok,
           f"stub dq {[round(d, 3) for d in stub_dqs]}; live stopped at r={live.iterations - 1} "
           f"with dq {live_dq:.4f} (sequence {[round(r.dq, 3) for r in live.records]})")


# 9 ------------------------------------------------------------------------------------


def test_criterion_9_w1_and_contraction():
    rng = np.random.default_rng(9)
    err = 0.0
    for _ in range(200):
        na, nb = (int(x) for x in rng.integers(1, 80, 2))
        while nb == na:
            nb = int(rng.integers(1, 80))
        a, b = rng.normal(0, rng.uniform(0.2, 3), na), rng.gamma(2.0, 1.0, nb)
        err = max(err, abs(w1_1d(a, b) - oracles.w1_quantile_integral(a, b)))
    est = contraction_estimate(GeometricShiftEnv(delta=0.6, n=500, fresh_noise=True).rounds(5))
    rel = abs(est.mean_ratio - 0.6) / 0.6
    record(9, "W1 oracle and contraction recovery", err <= 1e-6 and rel <= 0.2,
           f"W1 max err {err:.1e}; recovered delta {est.mean_ratio:.3f} (rel err {rel:.1%})")


# 10 -----------------------------------------------------------------------------------


def test_criterion_10_determinism(campaigns):
    a, b = campaigns["root"] / "t1", campaigns["root"] / "t8"
    names = sorted(str(p.relative_to(a)) for p in a.rglob("*.csv"))
    other = sorted(str(p.relative_to(b)) for p in b.rglob("*.csv"))
    diff = [n for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    extra_same = all((a / n).read_bytes() == (b / n).read_bytes() for n in ("manifest.json", "metrics.json"))
    record(10, "threads 1 vs 8 byte-identical", names == other and not diff and extra_same and len(names) > 10,
           f"{len(names)} CSVs compared, {len(diff)} differ")
