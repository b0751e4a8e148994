"""Sequential convex programming with elastic slacks and a box trust region.

Each outer iteration asks the program for a convex inner approximation around
the current point, relaxes the designated cone constraints with non-negative
slacks charged at ``penalty`` per unit, and solves the result with the conic
interior-point solver. Because the approximation is inner and the objective is
kept exact, the merit ``objective + penalty * total violation`` cannot increase
on accepted steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..barrier import SocConstraint
from .conic import ConicProblem, SolveResult, Status, solve_conic

#: violation / slack level treated as zero
SCP_TOL = 1e-6


@dataclass
class Convexification:
    """Convex subproblem over ``[decision, auxiliaries]``.

    ``elastic`` lists the cone constraints that may be relaxed by a slack; the
    remaining cones are structural (for example epigraph cones of auxiliaries)
    and stay hard.
    """

    problem: ConicProblem
    elastic: Sequence[int] = ()
    #: which program constraints the subproblem represents (None: all of them)
    included: np.ndarray | None = None


@dataclass
class NonconvexProgram:
    dim: int
    objective: Callable[[np.ndarray], float]
    #: true constraint margins, feasible iff all >= 0
    constraints: Callable[[np.ndarray], np.ndarray]
    #: ``convexifier(z, include)``; ``include`` is None or a boolean mask of constraints that must be kept
    convexifier: Callable[[np.ndarray, np.ndarray | None], Convexification]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    penalty: float = 1e4
    max_penalty: float = 1e8

    def violation(self, z) -> float:
        g = np.asarray(self.constraints(z), dtype=float)
        return float(np.sum(np.maximum(-g, 0.0))) if g.size else 0.0

    def merit(self, z, penalty: float | None = None) -> float:
        return self.objective(z) + (self.penalty if penalty is None else penalty) * self.violation(z)


@dataclass
class ScpResult(SolveResult):
    merit_history: list[float] = field(default_factory=list)
    penalty: float = float("nan")
    diagnostic: str = ""


def with_slacks(conv: Convexification, penalty: float) -> tuple[ConicProblem, int]:
    """Append one non-negative slack per elastic cone, charged linearly in the objective."""
    pb = conv.problem
    n = pb.dim
    ns = len(conv.elastic)
    if ns == 0:
        return pb, 0
    tot = n + ns
    P = np.zeros((tot, tot))
    P[:n, :n] = pb.P
    q = np.concatenate([pb.q, np.full(ns, penalty)])
    socs = []
    pos = {j: n + t for t, j in enumerate(conv.elastic)}
    for j, con in enumerate(pb.soc_constraints):
        A = np.hstack([con.A, np.zeros((con.A.shape[0], ns))])
        c = np.concatenate([con.c, np.zeros(ns)])
        if j in pos:
            c[pos[j]] = 1.0
        socs.append(SocConstraint(A, con.b, c, con.e))
    lower = np.concatenate([pb.lower, np.zeros(ns)])
    upper = np.concatenate([pb.upper, np.full(ns, np.inf)])
    G = np.hstack([pb.G, np.zeros((pb.G.shape[0], ns))])
    out = ConicProblem(P, q, pb.r, socs, lower, upper, G, pb.h, slack=np.arange(n, tot))
    return out, ns


def _trust_region(pb: ConicProblem, center: np.ndarray, radius: float) -> ConicProblem:
    k = center.size
    lower = pb.lower.copy()
    upper = pb.upper.copy()
    lower[:k] = np.maximum(lower[:k], center - radius)
    upper[:k] = np.minimum(upper[:k], center + radius)
    return replace(pb, lower=lower, upper=upper)


def _phase_one(pb: ConicProblem, ns: int) -> ConicProblem:
    """Same feasible set, objective = total slack (plus a tiny proximal term)."""
    n = pb.dim
    q = np.zeros(n)
    q[n - ns:] = 1.0
    P = 1e-9 * np.eye(n)
    return replace(pb, P=P, q=q, r=0.0)


@dataclass
class ElasticSolution:
    result: SolveResult
    problem: ConicProblem
    slack: float
    penalty: float
    #: smallest achievable total slack, when a phase-one solve was needed
    min_slack: float = 0.0

    @property
    def decision(self) -> np.ndarray:
        return self.result.decision


def solve_elastic(conv: Convexification, penalty: float, max_penalty: float = 1e8,
                  shape: Callable[[ConicProblem], ConicProblem] | None = None) -> ElasticSolution:
    """Solve ``conv`` with penalized slacks, escalating the penalty while it is too weak.

    If the penalized solution keeps slack, a phase-one problem minimizes the
    total slack over the same region; when that reaches zero the penalty is
    multiplied by 10 (up to ``max_penalty``) and the solve repeated.
    ``shape`` may post-process the slack problem (for example add a trust region).
    """
    while True:
        sub, ns = with_slacks(conv, penalty)
        if shape is not None:
            sub = shape(sub)
        res = solve_conic(sub)
        slack = float(np.sum(res.decision[sub.dim - ns:])) if ns else 0.0
        if not res.optimal or slack <= SCP_TOL:
            return ElasticSolution(res, sub, slack, penalty)
        p1 = solve_conic(_phase_one(sub, ns))
        min_slack = float(np.sum(p1.decision[sub.dim - ns:])) if p1.optimal else slack
        if min_slack <= SCP_TOL and penalty < max_penalty:
            penalty *= 10.0
            continue
        return ElasticSolution(res, sub, slack, penalty, min_slack)


def _inactive(sol: ElasticSolution, conv: Convexification, center: np.ndarray, radius: float) -> bool:
    """True when no elastic cone and no trust-region face binds at the subproblem optimum."""
    z = sol.decision
    for j in conv.elastic:
        if sol.problem.soc_constraints[j].residual(z) <= 1e-7:
            return False
    k = center.size
    box_lo, box_hi = conv.problem.lower[:k], conv.problem.upper[:k]
    tr_lo = np.maximum(box_lo, center - radius)
    tr_hi = np.minimum(box_hi, center + radius)
    lo_tr = (tr_lo > box_lo) & (z[:k] - tr_lo <= 1e-7)
    hi_tr = (tr_hi < box_hi) & (tr_hi - z[:k] <= 1e-7)
    return not (lo_tr.any() or hi_tr.any())


def _screened_solve(program: NonconvexProgram, z, penalty: float, radius: float):
    """Solve the trust-region subproblem at ``z``.

    A convexifier may leave out constraints that are far from active. If the
    subproblem optimum violates one of those, it is added and the solve repeated.
    """
    include = None
    while True:
        conv = program.convexifier(z, include)
        sol = solve_elastic(conv, penalty, program.max_penalty,
                            shape=lambda pb, c=z.copy(), r=radius: _trust_region(pb, c, r))
        if conv.included is None or not sol.result.optimal:
            return conv, sol
        g = np.asarray(program.constraints(sol.decision[:program.dim]), dtype=float)
        missing = ~conv.included & (g < 0.0)
        if not missing.any():
            return conv, sol
        include = conv.included | missing


def solve_scp(program: NonconvexProgram, init, max_outer: int = 30, trust_radius: float = 1.0,
              max_radius: float = 4.0, step_tol: float = 1e-6, merit_rtol: float = 1e-4,
              patience: int = 5) -> ScpResult:
    """Local solution of ``program`` from ``init`` by sequential convex programming.

    Terminates when the accepted step is shorter than ``step_tol`` (or the merit
    stalls to ``merit_rtol`` relative), after ``max_outer`` iterations, or with
    ``Infeasible`` once the minimized slack stays positive for ``patience``
    consecutive iterations.
    """
    z = np.asarray(init, dtype=float).copy()
    n = program.dim
    if z.shape != (n,):
        raise ValueError(f"init must have shape ({n},)")
    lo = program.lower if program.lower is not None else np.full(n, -np.inf)
    hi = program.upper if program.upper is not None else np.full(n, np.inf)
    if np.any(z < lo - 1e-12) or np.any(z > hi + 1e-12):
        raise ValueError("init must lie within the box bounds")
    penalty = float(program.penalty)
    radius = float(trust_radius)

    def result(status, it, diag=""):
        viol = program.violation(z)
        return ScpResult(status, z.copy(), program.objective(z), it, viol, float("nan"),
                         None, history, penalty, diag)

    history: list[float] = []
    try:
        merit = program.merit(z, penalty)
    except Exception as exc:  # noqa: BLE001 - evaluator failure is reported, not raised
        history = []
        return ScpResult(Status.INFEASIBLE, z, float("nan"), 0, float("inf"), float("nan"),
                         None, history, penalty, f"evaluation failed at init: {exc}")
    history.append(merit)
    stuck = 0
    it = 0
    while it < max_outer:
        it += 1
        try:
            conv, sol = _screened_solve(program, z, penalty, radius)
        except Exception as exc:  # noqa: BLE001
            return result(Status.INFEASIBLE, it, f"convexifier failed: {exc}")
        if sol.penalty != penalty:
            penalty = sol.penalty
            merit = program.merit(z, penalty)
            history[-1] = merit
        res = sol.result
        if not res.optimal:
            if radius > 1e-6:
                radius *= 0.5
                continue
            return result(Status.INFEASIBLE if res.status == Status.INFEASIBLE else Status.ITERATION_LIMIT,
                          it, f"subproblem {res.status.value}")
        stuck = stuck + 1 if sol.slack > SCP_TOL else 0
        cand = res.decision[:n]
        history_center, radius_used = z, radius
        new_merit = program.merit(cand, penalty)
        if new_merit > merit + 1e-9 * max(1.0, abs(merit)):
            radius *= 0.5
            if radius < 1e-8:
                break
            continue
        step = float(np.linalg.norm(cand - z))
        improvement = merit - new_merit
        z, merit = cand, new_merit
        history.append(merit)
        radius = min(radius * 1.5, max_radius)
        if stuck >= patience:
            return result(Status.INFEASIBLE, it, f"slack positive for {stuck} iterations")
        if step <= step_tol or improvement <= merit_rtol * max(1.0, abs(merit)):
            break
        if sol.slack <= SCP_TOL and _inactive(sol, conv, history_center, radius_used):
            # the convex relaxation's optimum is feasible and no approximation binds
            break
    if program.violation(z) <= SCP_TOL:
        g = np.asarray(program.constraints(z))
        if not g.size or np.min(g) >= -SCP_TOL:
            return result(Status.OPTIMAL, it)
    return result(Status.INFEASIBLE if stuck else Status.ITERATION_LIMIT, it,
                  "terminated with residual violation")
