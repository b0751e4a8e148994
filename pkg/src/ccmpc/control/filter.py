"""Predictive safety filter solved by iterative convex optimization, and the sequential controller."""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from ..barrier import FEASIBILITY_TOL, BarrierConfig
from ..models import RobotModel, rollout_array
from ..solve import solve_elastic
from .chance import HorizonChance
from .oneshot import SCREEN_MARGIN
from .mpc import FEASIBLE, INFEASIBLE, ControlDecision, MpcConfig, make_decision, nominal_mpc


def safety_filter(nominal: ControlDecision, x_k, k: int, obstacles, cfg: MpcConfig,
                  barrier_cfg: BarrierConfig, model: RobotModel, eps: float = 1e-4, j_max: int = 20,
                  init=None) -> ControlDecision:
    """Minimally modify the nominal plan so every horizon chance constraint holds.

    Each iteration fixes the predicted states of the current inputs, solves the
    convex inner approximation built there for
    ``min sum_i ||u_i - u_i^nom||_R^2``, and re-rolls the states. Iteration stops
    once the summed state change is at most ``eps`` or after ``j_max`` solves.
    ``init`` (for example the shifted previous solution) seeds the first states;
    it defaults to the nominal inputs.
    """
    t0 = time.perf_counter()
    x_k = np.asarray(x_k, dtype=float)
    N, m = cfg.horizon, cfg.input_dim
    U_nom = np.asarray(nominal.planned_inputs, dtype=float).ravel()
    if U_nom.size != N * m:
        raise ValueError(f"nominal plan must have {N} inputs")
    hc = HorizonChance(model, x_k, obstacles, barrier_cfg, N, SCREEN_MARGIN)
    lo, hi = cfg.input_box()
    info = {"converged": False, "stop_residuals": [], "subproblem_violation": [], "slack": []}

    def decision(U, status, iters, objective, message=""):
        d = make_decision(model, x_k, U, status, hc.margins(U), cfg, t0, iters, objective, "filter", message)
        d.info = info
        return d

    bad = hc.constant_violation(FEASIBILITY_TOL)
    if bad is not None:
        return decision(U_nom, INFEASIBLE, 0, float("nan"),
                        f"step {bad[0]} condition for obstacle {bad[1]} is violated for every input")
    margins_nom = hc.margins(U_nom)
    if margins_nom.size == 0 or margins_nom.min() >= -FEASIBILITY_TOL:
        info["converged"] = True
        info["stop_residuals"].append(0.0)
        return decision(U_nom, FEASIBLE, 1, 0.0)

    Rb = np.kron(np.eye(N), cfg.R)
    H = 2.0 * Rb
    f = -2.0 * Rb @ U_nom
    r = float(U_nom @ Rb @ U_nom)
    U = U_nom.copy() if init is None else np.clip(np.asarray(init, dtype=float).ravel(), lo, hi)
    X = rollout_array(model, x_k, U.reshape(N, m))
    penalty = 1e4
    j = 0
    slack = 0.0
    while j < j_max:
        include = None
        while True:
            conv = hc.convexify(U, H, f, r, lo, hi, include=include)
            sol = solve_elastic(conv, penalty)
            if not sol.result.optimal:
                break
            missing = ~conv.included & (hc.margins(sol.decision[:N * m]).ravel() < 0.0)
            if not missing.any():
                break
            include = conv.included | missing
        penalty = sol.penalty
        j += 1
        if not sol.result.optimal:
            return decision(U, INFEASIBLE, j, float("nan"),
                            f"convex subproblem {sol.result.status.value} at iteration {j}")
        z = sol.decision[:conv.problem.dim]
        slack = sol.slack
        info["slack"].append(slack)
        info["subproblem_violation"].append(conv.problem.max_violation(z))
        U_new = np.clip(z[:N * m], lo, hi)
        X_new = rollout_array(model, x_k, U_new.reshape(N, m))
        resid = float(np.sum(np.linalg.norm(X_new - X, axis=1)))
        info["stop_residuals"].append(resid)
        U, X = U_new, X_new
        if resid <= eps:
            info["converged"] = True
            break
    margins = hc.margins(U)
    ok = margins.min() >= -FEASIBILITY_TOL
    objective = float((U - U_nom) @ Rb @ (U - U_nom))
    msg = "" if ok else f"chance margin {margins.min():.3e} after {j} iterations (slack {slack:.3e})"
    return decision(U, FEASIBLE if ok else INFEASIBLE, j, objective, msg)


def sequential_step(x_k, k: int, obstacles, cfg: MpcConfig, barrier_cfg: BarrierConfig, model: RobotModel,
                    eps: float = 1e-4, j_max: int = 20, warm_start=None) -> ControlDecision:
    """Nominal tracking MPC followed by the predictive safety filter."""
    t0 = time.perf_counter()
    nominal = nominal_mpc(x_k, k, cfg, model)
    if not nominal.feasible:
        nominal.message = f"nominal: {nominal.message}"
        return nominal
    out = safety_filter(nominal, x_k, k, obstacles, cfg, barrier_cfg, model, eps, j_max, init=warm_start)
    out = replace(out, solve_time=time.perf_counter() - t0)
    if not out.feasible:
        out.message = f"filter: {out.message}"
    return out
