"""Acceptance criteria, one test each, with one printed PASS/FAIL line per criterion.

Criteria the implemented method cannot meet are kept at full strength and
marked as strict expected failures; the reason string states what is observed.
"""

import time

import numpy as np
import pytest

import ccmpc.control.filter as filter_module
from ccmpc.barrier import BarrierConfig, cbc_moments, chance_margin, feasibility_bound
from ccmpc.control import FEASIBLE, HorizonChance, cc_mpc_cbf, cc_mpc_dc, nominal_mpc, safety_filter
from ccmpc.experiments import (default_scenario, feasibility_experiment, make_rng, random_instance,
                               run_closed_loop, success_rate_experiment, validate_moments)
from ccmpc.models import rollout_array

from conftest import aux_function, random_state

pytestmark = pytest.mark.acceptance

K_MAX = 200


def report(capsys, number, ok, detail, started):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail} ({time.perf_counter() - started:.1f} s)"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def random_obstacles(rng, scenario, x, sigma2):
    """The scenario's obstacles measured at random points 1.5 to 4 units from the robot."""
    pos = []
    for _ in scenario.obstacles:
        d = rng.normal(size=3)
        d[2] *= 0.2
        pos.append(x[:3] + rng.uniform(1.5, 4.0) * d / np.linalg.norm(d))
    return scenario.with_noise(sigma2).tracked(pos)


def test_01_moment_matching(capsys):
    t0 = time.perf_counter()
    sc = default_scenario()
    model, bcfg = sc.model(), sc.barrier_config()
    rng = make_rng(2024)
    reports = []
    for i in range(10):
        x, o, u, spec = random_instance(rng, sc, 0.1)
        reports.append(validate_moments(x, o, u, model, spec, bcfg, 10**6, seed=i))
    passed = sum(r.agree for r in reports)
    worst = max(max(abs(r.mean_z), abs(r.var_z)) for r in reports)
    elapsed = time.perf_counter() - t0
    report(capsys, 1, passed == 10 and elapsed < 120,
           f"moment matching {passed}/10 within 3 SE (largest |z| {worst:.2f})", t0)


def test_02_noise_free_reduction(capsys):
    t0 = time.perf_counter()
    sc = default_scenario().with_noise(0.0)
    cc = run_closed_loop(sc.replace(controller="cc-mpc-cbf"), 0)
    det = run_closed_loop(sc.replace(controller="det-mpc-cbf"), 0)
    n = min(cc.steps, det.steps)
    diff = max((float(np.max(np.abs(a - b))) for a, b in zip(cc.inputs, det.inputs)), default=np.inf)
    ok = cc.steps == det.steps == K_MAX and diff <= 1e-6 and time.perf_counter() - t0 < 300
    report(capsys, 2, ok, f"sigma2=0: {n} common steps, max input difference {diff:.2e}", t0)


def test_03_gamma_one_identity(capsys):
    t0 = time.perf_counter()
    sc = default_scenario().with_noise(0.1)
    model, cfg = sc.model(), sc.mpc_config()
    rng = make_rng(3)
    same = 0
    statuses = set()
    for _ in range(50):
        x = random_state(rng, 3.0)
        obs = random_obstacles(rng, sc, x, 0.1)
        a = cc_mpc_cbf(x, 0, obs, cfg, BarrierConfig(1.0, 0.97), model)
        b = cc_mpc_dc(x, 0, obs, cfg, BarrierConfig(float(rng.uniform(0.05, 1.0)), 0.97), model)
        statuses.add(a.status)
        same += (a.status == b.status and np.array_equal(a.applied_input, b.applied_input)
                 and np.array_equal(a.planned_inputs, b.planned_inputs) and np.array_equal(a.margins, b.margins))
    ok = same == 50 and time.perf_counter() - t0 < 60
    report(capsys, 3, ok, f"gamma=1 vs distance constraints: {same}/50 bit-identical (statuses {sorted(statuses)})",
           t0)


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="noise moves the obstacle after a plan whose first barrier condition is active; the next "
                          "step's first condition does not depend on the input, so CC-MPC-CBF goes infeasible")
def test_04_success_table(capsys):
    t0 = time.perf_counter()
    table = success_rate_experiment(default_scenario(), [0.0001, 0.01, 0.1], ["cc-mpc-cbf", "det-mpc-cbf"], 20)
    cc = [table.row(s, "cc-mpc-cbf").success_pct for s in (0.0001, 0.01, 0.1)]
    det = [table.row(s, "det-mpc-cbf").success_pct for s in (0.0001, 0.01, 0.1)]
    ok = (all(v == 100.0 for v in cc) and det[2] <= 60.0 and det[0] >= det[1] >= det[2]
          and time.perf_counter() - t0 < 1800)
    report(capsys, 4, ok, f"success % cc-mpc-cbf {cc}, det-mpc-cbf {det} at sigma2 0.0001/0.01/0.1", t0)


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="at sigma2 >= 1 the first-step chance condition fails from the start state for every "
                          "input, so both controllers are infeasible at k = 0 in every trial")
def test_05_feasibility_vs_noise(capsys):
    t0 = time.perf_counter()
    table = feasibility_experiment(default_scenario(), "sigma2", [1.0, 4.0], 20)
    one = {s: table.row(s, "cc-mpc-cbf") for s in (1.0, 4.0)}
    seq = {s: table.row(s, "sequential") for s in (1.0, 4.0)}
    k1, k4 = one[1.0].censored_mean_k(K_MAX), one[4.0].censored_mean_k(K_MAX)
    ok = (one[4.0].feasible_pct < one[1.0].feasible_pct
          and all(seq[s].feasible_pct >= one[s].feasible_pct for s in (1.0, 4.0))
          and k4 < k1 and time.perf_counter() - t0 < 2400)
    report(capsys, 5, ok, f"feasible % one-shot {one[1.0].feasible_pct:g}/{one[4.0].feasible_pct:g}, sequential "
           f"{seq[1.0].feasible_pct:g}/{seq[4.0].feasible_pct:g}, mean infeasible k {k1:g}/{k4:g} "
           "at sigma2 1/4", t0)


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="at sigma2 = 1 the first-step chance condition fails at k = 0 for gamma <= 0.5 and within "
                          "a few steps for gamma = 1")
def test_06_feasibility_vs_gamma(capsys):
    t0 = time.perf_counter()
    gammas = [1.0, 0.5, 0.1]
    table = feasibility_experiment(default_scenario().with_noise(1.0), "gamma", gammas, 20)
    feas = [table.row(g, "cc-mpc-cbf").feasible_pct for g in gammas]
    ok = (feas[0] >= feas[1] >= feas[2] and feas[0] == 100.0 and feas[2] <= 60.0
          and time.perf_counter() - t0 < 1800)
    report(capsys, 6, ok, f"feasible % at gamma 1.0/0.5/0.1: {feas}", t0)


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="at sigma2 = 1, gamma = 0.5 the first-step chance condition fails at k = 0 for every horizon")
def test_07_feasibility_vs_horizon(capsys):
    t0 = time.perf_counter()
    horizons = [5, 15, 30]
    table = feasibility_experiment(default_scenario().with_noise(1.0), "horizon", horizons, 20)
    feas = [table.row(n, "cc-mpc-cbf").feasible_pct for n in horizons]
    ok = feas[0] >= feas[1] >= feas[2] and feas[0] == 100.0 and time.perf_counter() - t0 < 2400
    report(capsys, 7, ok, f"feasible % at N 5/15/30: {feas}", t0)


def test_08_feasibility_bound(capsys):
    t0 = time.perf_counter()
    sc = default_scenario()
    model = sc.model()
    rng = make_rng(8)
    worst = -np.inf
    monotone = 0
    for _ in range(1000):
        s2 = float(rng.choice([0.0, 0.01, 0.1, 1.0, 4.0]))
        x, o, u, spec = random_instance(rng, sc, s2)
        cfg = BarrierConfig(float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.5, 0.999)))
        gap = chance_margin(cbc_moments(x, o, model, spec, cfg), u, cfg) - feasibility_bound(x, o, u, model, spec,
                                                                                             cfg)
        worst = max(worst, gap)
        cfg97 = cfg.replace(delta=0.97)
        b = [feasibility_bound(x, o, u, model, spec.with_noise(v), cfg97) for v in (0.1, 1.0, 4.0)]
        monotone += b[0] > b[1] > b[2]
    ok = worst <= 1e-9 and monotone == 1000 and time.perf_counter() - t0 < 10
    report(capsys, 8, ok, f"margin - bound <= {worst:.2e} on 1000 instances, strictly decreasing in {monotone}/1000",
           t0)


def test_09_convexification_soundness(capsys):
    # cone-feasible inputs are drawn around a feasible reference; infeasible draws
    # are pulled back to the cone boundary by bisection, where the test is sharpest
    t0 = time.perf_counter()
    sc = default_scenario()
    model, cfg = sc.model(), sc.mpc_config()
    lo, hi = cfg.input_box()
    nU = lo.size
    rng = make_rng(9)
    checked, boundary, worst, instances = 0, 0, np.inf, 0
    while checked < 1000:
        x = random_state(rng, 2.0)
        obs = random_obstacles(rng, sc, x, float(rng.choice([0.0, 0.01, 0.1, 1.0])))
        bcfg = BarrierConfig(float(rng.uniform(0.1, 1.0)), float(rng.uniform(0.5, 0.99)))
        hc = HorizonChance(model, x, obs, bcfg, cfg.horizon)
        U_ref = rng.uniform(-2.0, 2.0, nU)
        free = ~hc.constant_mask()
        if not free.any() or hc.margins(U_ref)[free].min() < 0.0:
            continue
        instances += 1
        pb = hc.convexify(U_ref, np.eye(nU), np.zeros(nU), 0.0, lo, hi).problem
        aux = aux_function(hc, U_ref)

        def feasible(V):
            return pb.max_violation(np.concatenate([V, aux(V)])) <= 1e-10

        for _ in range(20):
            V = np.clip(U_ref + rng.normal(scale=1.0, size=nU), lo, hi)
            if not feasible(V):
                a, b = 0.0, 1.0
                for _ in range(12):
                    mid = 0.5 * (a + b)
                    a, b = (mid, b) if feasible(U_ref + mid * (V - U_ref)) else (a, mid)
                if a == 0.0:
                    continue
                V = U_ref + a * (V - U_ref)
                boundary += 1
            checked += 1
            worst = min(worst, float(hc.margins(V)[free].min()))
            if checked == 1000:
                break
    ok = worst >= -1e-8 and time.perf_counter() - t0 < 10
    report(capsys, 9, ok, f"1000 cone-feasible horizon inputs ({boundary} on the boundary, {instances} instances), "
           f"smallest true margin {worst:.3e}", t0)


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="the iteration converges linearly (ratio about 0.8 to 0.9 when several horizon "
                          "constraints are active), so some filtered steps need more than 20 iterations for 1e-4")
def test_10_algorithm_contract(capsys, monkeypatch):
    t0 = time.perf_counter()
    calls = []
    original = filter_module.safety_filter

    def recording(nominal, x_k, k, obstacles, cfg, barrier_cfg, model, eps=1e-4, j_max=20, init=None):
        d = original(nominal, x_k, k, obstacles, cfg, barrier_cfg, model, eps, j_max, init)
        res = d.info.get("stop_residuals", [])
        if res and res[0] > 0.0:  # the nominal plan was unsafe and the iteration ran
            calls.append((np.array(x_k), d, model))
        return d

    monkeypatch.setattr(filter_module, "safety_filter", recording)
    sc = default_scenario(controller="sequential").with_noise(0.1)
    seed = 0
    while len(calls) < 50 and seed < 40:
        run_closed_loop(sc, seed)
        seed += 1
    steps = calls[:50]
    converged = sum(d.info["converged"] and d.inner_iterations <= 20 and d.info["stop_residuals"][-1] <= 1e-4
                    for _, d, _ in steps)
    exact = sum(np.array_equal(d.predicted_states, rollout_array(m, x, d.planned_inputs)) for x, d, m in steps)
    safe = sum(d.margins.min() >= -1e-6 for _, d, _ in steps)
    ok = len(steps) == 50 and converged == exact == safe == 50 and time.perf_counter() - t0 < 300
    report(capsys, 10, ok, f"{len(steps)} filtered steps from {seed} runs: stop criterion met in {converged}, "
           f"exact rollout in {exact}, margins >= -1e-6 in {safe}", t0)


@pytest.mark.xfail(strict=True, raises=AssertionError,
                   reason="each filter step solves up to 20 convex subproblems while the one-shot SCP typically "
                          "needs a few, so the sequential pipeline is slower per step")
def test_11_timing_direction(capsys):
    t0 = time.perf_counter()
    sc = default_scenario().with_noise(0.1)
    wall = {}
    for c in ("sequential", "cc-mpc-cbf"):
        wall[c] = float(np.mean([run_closed_loop(sc.replace(controller=c), s).wall_time for s in range(5)]))
    ok = wall["sequential"] < wall["cc-mpc-cbf"]
    report(capsys, 11, ok, f"mean wall time sequential {wall['sequential']:.2f} s vs one-shot "
           f"{wall['cc-mpc-cbf']:.2f} s", t0)


def test_12_filter_idempotence(capsys):
    t0 = time.perf_counter()
    sc = default_scenario().with_noise(0.1)
    model, cfg, bcfg = sc.model(), sc.mpc_config(), sc.barrier_config()
    rng = make_rng(12)
    found = kept = 0
    worst = 0.0
    while found < 100:
        x = random_state(rng, 3.0)
        k = int(rng.integers(0, K_MAX))
        obs = random_obstacles(rng, sc, x, 0.1)
        nom = nominal_mpc(x, k, cfg, model)
        if nom.status != FEASIBLE or HorizonChance(model, x, obs, bcfg, cfg.horizon).margins(
                nom.planned_inputs).min() < 0.0:
            continue
        found += 1
        d = safety_filter(nom, x, k, obs, cfg, bcfg, model)
        worst = max(worst, d.objective)
        kept += d.status == FEASIBLE and np.array_equal(d.planned_inputs, nom.planned_inputs) and d.objective <= 1e-10
    ok = kept == 100 and time.perf_counter() - t0 < 60
    report(capsys, 12, ok, f"{kept}/100 safe nominal plans returned unchanged (largest objective {worst:.1e})", t0)
