"""Seeded closed-loop simulation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..barrier import barrier_value
from ..control import (FEASIBLE, INFEASIBLE, ControlDecision, cc_mpc_cbf, cc_mpc_dc, det_mpc_cbf, nominal_mpc,
                       sequential_step, shift_plan)
from ..models import obstacle_step
from .scenario import Scenario


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator, so trial ``i`` is reproducible in any worker."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class TrajectoryLog:
    states: list[np.ndarray] = field(default_factory=list)
    inputs: list[np.ndarray] = field(default_factory=list)
    obstacles: list[np.ndarray] = field(default_factory=list)
    #: h(x_k, o_k) per obstacle at every logged state
    h_values: list[np.ndarray] = field(default_factory=list)
    #: smallest planned chance margin of each decision (nan when not applicable)
    margin_min: list[float] = field(default_factory=list)
    status: list[str] = field(default_factory=list)
    solve_time: list[float] = field(default_factory=list)
    collided: bool = False
    first_infeasible_k: int | None = None
    wall_time: float = 0.0
    messages: list[str] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.inputs)

    @property
    def feasible(self) -> bool:
        return self.first_infeasible_k is None

    @property
    def success(self) -> bool:
        return self.feasible and not self.collided


def decide(scenario: Scenario, x, k, tracked, cfg, bcfg, model, warm) -> ControlDecision:
    kind = scenario.controller
    if kind == "nominal":
        return nominal_mpc(x, k, cfg, model)
    if kind == "det-mpc-cbf":
        return det_mpc_cbf(x, k, tracked, cfg, bcfg, model, warm_start=warm)
    if kind == "cc-mpc-cbf":
        return cc_mpc_cbf(x, k, tracked, cfg, bcfg, model, warm_start=warm)
    if kind == "cc-mpc-dc":
        return cc_mpc_dc(x, k, tracked, cfg, bcfg, model, warm_start=warm)
    return sequential_step(x, k, tracked, cfg, bcfg, model, scenario.filter_eps, scenario.filter_max_iter,
                           warm_start=warm)


def run_closed_loop(scenario: Scenario, seed: int | None = None, stop_on_infeasible: bool = True) -> TrajectoryLog:
    """Simulate ``k = 0 .. k_max - 1`` and log every step.

    Obstacles move as ``xi(o) + w`` with ``w ~ N(0, sigma^2 I)`` drawn from the
    seeded generator; the controller sees the sampled positions. Controller
    exceptions count as infeasible. By default the run stops at the first
    infeasible decision; with ``stop_on_infeasible=False`` an infeasible step
    applies the unconstrained nominal input instead and the loop carries on, so
    the log always covers ``k_max`` steps.
    """
    t_start = time.perf_counter()
    seed = scenario.seed if seed is None else seed
    rng = make_rng(seed)
    model = scenario.model()
    cfg = scenario.mpc_config()
    bcfg = scenario.barrier_config()
    specs = scenario.obstacle_specs()
    x = scenario.initial_state()
    obs = [s.initial_state.copy() for s in specs]
    log = TrajectoryLog()
    warm = None

    def record_state(x, obs):
        h = np.array([barrier_value(x, o, s, bcfg) for s, o in zip(specs, obs)])
        log.states.append(x.copy())
        log.obstacles.append(np.array(obs))
        log.h_values.append(h)
        if np.any(h < 0):
            log.collided = True

    for k in range(scenario.k_max):
        record_state(x, obs)
        tracked = scenario.tracked(obs)
        try:
            dec = decide(scenario, x, k, tracked, cfg, bcfg, model, warm)
        except Exception as exc:  # noqa: BLE001 - the harness never aborts on controller errors
            dec = None
            msg = f"controller error: {exc!r}"
        if dec is None or dec.status != FEASIBLE:
            log.status.append(INFEASIBLE)
            log.solve_time.append(dec.solve_time if dec is not None else 0.0)
            log.margin_min.append(float(np.min(dec.margins)) if dec is not None and dec.margins.size else float("nan"))
            log.messages.append(msg if dec is None else dec.message)
            if log.first_infeasible_k is None:
                log.first_infeasible_k = k
            if stop_on_infeasible:
                break
            dec = nominal_mpc(x, k, cfg, model)
            if dec.status != FEASIBLE:
                break
        else:
            log.status.append(FEASIBLE)
            log.solve_time.append(dec.solve_time)
            log.margin_min.append(float(np.min(dec.margins)) if dec.margins.size else float("nan"))
            log.messages.append(dec.message)
        u = dec.applied_input
        log.inputs.append(u.copy())
        warm = shift_plan(dec.planned_inputs, cfg)
        x = model.step(x, u)
        obs = [obstacle_step(s, o, rng.normal(0.0, s.sigma, s.state_dim)) for s, o in zip(specs, obs)]
    else:
        record_state(x, obs)
    log.wall_time = time.perf_counter() - t_start
    return log


def trajectory_rows(log: TrajectoryLog, timing: bool = True) -> tuple[list[str], list[list]]:
    """Header and one row per decision step (the step that went infeasible has nan inputs).

    With ``timing=False`` the solve time is written as nan so the rows depend
    only on the scenario and seed.
    """
    n = log.states[0].size if log.states else 0
    m = log.inputs[0].size if log.inputs else 3
    J = log.h_values[0].size if log.h_values else 0
    header = (["k"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)]
              + [f"h_obs{j + 1}" for j in range(J)] + ["margin_min", "status", "solve_ms"])
    rows = []
    for k, status in enumerate(log.status):
        u = log.inputs[k] if k < len(log.inputs) else np.full(m, np.nan)
        rows.append([k, *log.states[k], *u, *log.h_values[k], log.margin_min[k], status,
                     1e3 * log.solve_time[k] if timing else float("nan")])
    return header, rows


def trajectory_csv(log: TrajectoryLog, timing: bool = True) -> str:
    from .tables import fmt  # local import: tables depends on this module
    header, rows = trajectory_rows(log, timing)
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
