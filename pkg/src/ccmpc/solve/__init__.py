"""Convex and sequential-convex solvers used by the controllers."""

from .conic import ConicProblem, SolveResult, Status, solve_conic
from .scp import Convexification, ElasticSolution, NonconvexProgram, ScpResult, solve_elastic, solve_scp, with_slacks

__all__ = ["ConicProblem", "SolveResult", "Status", "solve_conic",
           "Convexification", "ElasticSolution", "NonconvexProgram", "ScpResult", "solve_elastic",
           "solve_scp", "with_slacks"]
