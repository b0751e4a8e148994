"""Tracking MPC configuration, decisions and the nominal (constraint-free of obstacles) MPC."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..models import RobotModel, TrajectorySensitivity, rollout_array, trajectory_sensitivity
from ..solve import ConicProblem, solve_conic

FEASIBLE = "Feasible"
INFEASIBLE = "Infeasible"


def _psd(M, name, strict=False):
    lam = np.linalg.eigvalsh(0.5 * (M + M.T))
    if strict and lam[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    if lam[0] < -1e-12 * max(1.0, abs(lam[-1])):
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights and box constraints of the tracking MPC.

    The cost is ``sum_{i=1..N} ||x_i - r_i||_Q^2 + ||x_N - r_N||_P^2 + sum_{i=0..N-1} ||u_i||_R^2``.
    """

    reference: Callable[[int], np.ndarray]
    horizon: int = 15
    P: np.ndarray = field(default_factory=lambda: 1000.0 * np.eye(6))
    Q: np.ndarray = field(default_factory=lambda: 1000.0 * np.eye(6))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    state_lower: np.ndarray = field(default_factory=lambda: np.full(6, -5.0))
    state_upper: np.ndarray = field(default_factory=lambda: np.full(6, 5.0))
    input_lower: np.ndarray = field(default_factory=lambda: np.full(3, -4.0))
    input_upper: np.ndarray = field(default_factory=lambda: np.full(3, 4.0))
    terminal_lower: np.ndarray | None = None
    terminal_upper: np.ndarray | None = None

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("P", "Q", "R", "state_lower", "state_upper", "input_lower", "input_upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        _psd(self.P, "P")
        _psd(self.Q, "Q")
        _psd(self.R, "R", strict=True)
        n, m = self.Q.shape[0], self.R.shape[0]
        if self.P.shape != (n, n) or self.state_lower.shape != (n,) or self.state_upper.shape != (n,):
            raise ValueError("state weights and bounds must share the state dimension")
        if self.input_lower.shape != (m,) or self.input_upper.shape != (m,):
            raise ValueError("input bounds must match R")
        if np.any(self.state_lower > self.state_upper) or np.any(self.input_lower > self.input_upper):
            raise ValueError("bounds must be nonempty (lower <= upper)")
        tl = self.state_lower if self.terminal_lower is None else np.asarray(self.terminal_lower, float)
        tu = self.state_upper if self.terminal_upper is None else np.asarray(self.terminal_upper, float)
        if np.any(tl > tu):
            raise ValueError("terminal set must be nonempty")
        object.__setattr__(self, "terminal_lower", tl)
        object.__setattr__(self, "terminal_upper", tu)

    @property
    def state_dim(self) -> int:
        return self.Q.shape[0]

    @property
    def input_dim(self) -> int:
        return self.R.shape[0]

    def references(self, k: int) -> np.ndarray:
        """Reference states ``r(k), ..., r(k + N)`` as an ``(N + 1, n)`` array."""
        return np.array([self.reference(k + i) for i in range(self.horizon + 1)], dtype=float)

    def input_box(self) -> tuple[np.ndarray, np.ndarray]:
        N = self.horizon
        return np.tile(self.input_lower, N), np.tile(self.input_upper, N)


@dataclass
class ControlDecision:
    applied_input: np.ndarray
    planned_inputs: np.ndarray
    predicted_states: np.ndarray
    status: str
    #: true chance margins, shape (N, number of obstacles)
    margins: np.ndarray
    solve_time: float = 0.0
    inner_iterations: int = 0
    objective: float = float("nan")
    stage: str = ""
    message: str = ""
    #: solver diagnostics (iteration residuals, convergence flags)
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


def tracking_cost(model: RobotModel, x_k, U, k: int, cfg: MpcConfig) -> float:
    """Exact tracking cost of the stacked input sequence ``U`` from ``x_k``."""
    U = np.asarray(U, dtype=float).reshape(cfg.horizon, cfg.input_dim)
    X = rollout_array(model, x_k, U)
    ref = cfg.references(k)
    d = X[1:] - ref[1:]
    cost = np.einsum("ij,jk,ik->", d, cfg.Q, d)
    dN = d[-1]
    cost += dN @ cfg.P @ dN + np.einsum("ij,jk,ik->", U, cfg.R, U)
    return float(cost)


def tracking_qp(sens: TrajectorySensitivity, k: int, cfg: MpcConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """``(H, f, r)`` with cost ``1/2 U'H U + f'U + r`` under the affine prediction ``sens``.

    Exact for linear models, Gauss-Newton otherwise.
    """
    N, m = cfg.horizon, cfg.input_dim
    ref = cfg.references(k)
    H = np.kron(np.eye(N), cfg.R)
    f = np.zeros(N * m)
    r = 0.0
    for i in range(1, N + 1):
        M, c = sens.state_affine(i)
        W = cfg.Q + cfg.P if i == N else cfg.Q
        d = c - ref[i]
        WM = W @ M
        H += M.T @ WM
        f += WM.T @ d
        r += d @ W @ d
    return 2.0 * H, 2.0 * f, float(r)


def state_rows(sens: TrajectorySensitivity, cfg: MpcConfig) -> tuple[np.ndarray, np.ndarray]:
    """Linear rows ``G U <= h`` for the state and terminal boxes.

    Rows already implied by the input box are dropped.
    """
    N = cfg.horizon
    lo_u, hi_u = cfg.input_box()
    G_rows, h_rows = [], []
    for i in range(1, N + 1):
        M, c = sens.state_affine(i)
        lo = cfg.terminal_lower if i == N else cfg.state_lower
        hi = cfg.terminal_upper if i == N else cfg.state_upper
        if i == N:
            lo = np.maximum(lo, cfg.state_lower)
            hi = np.minimum(hi, cfg.state_upper)
        reach_hi = np.maximum(M * hi_u, M * lo_u).sum(axis=1) + c
        reach_lo = np.minimum(M * hi_u, M * lo_u).sum(axis=1) + c
        for r in range(M.shape[0]):
            if np.isfinite(hi[r]) and reach_hi[r] > hi[r]:
                G_rows.append(M[r])
                h_rows.append(hi[r] - c[r])
            if np.isfinite(lo[r]) and reach_lo[r] < lo[r]:
                G_rows.append(-M[r])
                h_rows.append(c[r] - lo[r])
    if not G_rows:
        return np.zeros((0, N * cfg.input_dim)), np.zeros(0)
    return np.array(G_rows), np.array(h_rows)


def shift_plan(planned: np.ndarray, cfg: MpcConfig) -> np.ndarray:
    """Warm start for the next step: drop the applied input and repeat the last one."""
    U = np.asarray(planned, dtype=float).reshape(-1, cfg.input_dim)
    N = cfg.horizon
    if U.shape[0] == 0:
        return np.zeros(N * cfg.input_dim)
    shifted = np.vstack([U[1:], U[-1:]])
    if shifted.shape[0] < N:
        shifted = np.vstack([shifted, np.repeat(shifted[-1:], N - shifted.shape[0], axis=0)])
    lo, hi = cfg.input_box()
    return np.clip(shifted[:N].ravel(), lo, hi)


def make_decision(model, x_k, U, status, margins, cfg, t0, iterations=0, objective=float("nan"),
                  stage="", message="") -> ControlDecision:
    U = np.asarray(U, dtype=float).reshape(cfg.horizon, cfg.input_dim)
    X = rollout_array(model, x_k, U)
    return ControlDecision(U[0].copy(), U, X, status, margins, time.perf_counter() - t0, iterations,
                           objective, stage, message)


def nominal_mpc(x_k, k: int, cfg: MpcConfig, model: RobotModel, warm_start=None) -> ControlDecision:
    """Standard tracking MPC with dynamics and box constraints only."""
    t0 = time.perf_counter()
    x_k = np.asarray(x_k, dtype=float)
    N, m = cfg.horizon, cfg.input_dim
    U0 = np.zeros(N * m) if warm_start is None else np.asarray(warm_start, dtype=float)
    sens = trajectory_sensitivity(model, x_k, U0.reshape(N, m))
    H, f, r = tracking_qp(sens, k, cfg)
    G, h = state_rows(sens, cfg)
    lo, hi = cfg.input_box()
    res = solve_conic(ConicProblem(H, f, r, [], lo, hi, G, h))
    status = FEASIBLE if res.optimal and res.max_violation <= 1e-6 else INFEASIBLE
    U = np.clip(res.decision, lo, hi)
    return make_decision(model, x_k, U, status, np.zeros((N, 0)), cfg, t0, res.iterations,
                         tracking_cost(model, x_k, U, k, cfg), "nominal",
                         "" if status == FEASIBLE else f"nominal MPC {res.status.value}")
