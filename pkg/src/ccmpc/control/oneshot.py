"""One-shot MPC with barrier constraints: deterministic, chance-constrained and distance variants."""

from __future__ import annotations

import time

import numpy as np

from ..barrier import FEASIBILITY_TOL, BarrierConfig
from ..models import RobotModel, trajectory_sensitivity
from ..solve import NonconvexProgram, Status, solve_scp
from .chance import HorizonChance, TrackedObstacle, as_tracked
from .mpc import (FEASIBLE, INFEASIBLE, ControlDecision, MpcConfig, make_decision, state_rows,
                  tracking_cost, tracking_qp)


#: constraints with a larger true margin at the linearization point are left out of subproblems
SCREEN_MARGIN = 5.0


def _initial_guess(warm_start, cfg: MpcConfig) -> np.ndarray:
    lo, hi = cfg.input_box()
    if warm_start is None:
        return np.clip(np.zeros(lo.size), lo, hi)
    return np.clip(np.asarray(warm_start, dtype=float).ravel(), lo, hi)


def _solve_one_shot(x_k, k, obstacles, cfg: MpcConfig, barrier_cfg: BarrierConfig, model: RobotModel,
                    warm_start, label: str, max_outer: int = 30) -> ControlDecision:
    t0 = time.perf_counter()
    x_k = np.asarray(x_k, dtype=float)
    hc = HorizonChance(model, x_k, obstacles, barrier_cfg, cfg.horizon, SCREEN_MARGIN)
    U0 = _initial_guess(warm_start, cfg)
    bad = hc.constant_violation(FEASIBILITY_TOL)
    if bad is not None:
        return make_decision(model, x_k, U0, INFEASIBLE, hc.margins(U0), cfg, t0, 0, float("nan"), label,
                             f"step {bad[0]} condition for obstacle {bad[1]} is violated for every input")
    lo, hi = cfg.input_box()
    linear = model.is_linear
    sens0 = trajectory_sensitivity(model, x_k, U0.reshape(cfg.horizon, cfg.input_dim))
    G, h = state_rows(sens0, cfg)
    qp0 = tracking_qp(sens0, k, cfg)

    def convexifier(U, include=None):
        if linear:
            H, f, r = qp0
        else:
            H, f, r = tracking_qp(trajectory_sensitivity(model, x_k, U.reshape(cfg.horizon, cfg.input_dim)), k, cfg)
        return hc.convexify(U, H, f, r, lo, hi, G, h, include)

    if linear:
        H, f, r = qp0
        objective = lambda U: float(0.5 * U @ H @ U + f @ U + r)  # noqa: E731
    else:
        objective = lambda U: tracking_cost(model, x_k, U, k, cfg)  # noqa: E731
    program = NonconvexProgram(lo.size, objective, lambda U: hc.margins(U).ravel(), convexifier, lo, hi)
    res = solve_scp(program, U0, max_outer=max_outer)
    U = np.clip(res.decision, lo, hi)
    margins = hc.margins(U)
    ok = res.status == Status.OPTIMAL and (margins.size == 0 or margins.min() >= -FEASIBILITY_TOL)
    if G.shape[0]:
        ok = ok and float(np.max(G @ U - h)) <= FEASIBILITY_TOL
    return make_decision(model, x_k, U, FEASIBLE if ok else INFEASIBLE, margins, cfg, t0, res.iterations,
                         tracking_cost(model, x_k, U, k, cfg), label, "" if ok else res.diagnostic or res.status.value)


def det_mpc_cbf(x_k, k: int, obstacles, cfg: MpcConfig, barrier_cfg: BarrierConfig, model: RobotModel,
                warm_start=None) -> ControlDecision:
    """MPC with deterministic barrier conditions on the noise-free predicted obstacle means."""
    clean = [TrackedObstacle(ob.spec.with_noise(0.0), ob.position) for ob in as_tracked(obstacles)]
    return _solve_one_shot(x_k, k, clean, cfg, barrier_cfg.replace(zeta=0.0), model, warm_start, "det-mpc-cbf")


def cc_mpc_cbf(x_k, k: int, obstacles, cfg: MpcConfig, barrier_cfg: BarrierConfig, model: RobotModel,
               warm_start=None) -> ControlDecision:
    """One-shot chance-constrained MPC with barrier conditions, solved by SCP."""
    return _solve_one_shot(x_k, k, obstacles, cfg, barrier_cfg, model, warm_start, "cc-mpc-cbf")


def cc_mpc_dc(x_k, k: int, obstacles, cfg: MpcConfig, barrier_cfg: BarrierConfig, model: RobotModel,
              warm_start=None) -> ControlDecision:
    """Chance-constrained MPC with distance constraints: the barrier problem at ``gamma = 1``."""
    return _solve_one_shot(x_k, k, obstacles, cfg, barrier_cfg.replace(gamma=1.0), model, warm_start,
                           "cc-mpc-dc")
