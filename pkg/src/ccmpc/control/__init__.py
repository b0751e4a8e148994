"""Controllers: nominal MPC, one-shot barrier MPCs, and the sequential safety-filter pipeline."""

from .chance import HorizonChance, TrackedObstacle
from .filter import safety_filter, sequential_step
from .mpc import FEASIBLE, INFEASIBLE, ControlDecision, MpcConfig, nominal_mpc, shift_plan, tracking_cost
from .oneshot import cc_mpc_cbf, cc_mpc_dc, det_mpc_cbf

__all__ = ["HorizonChance", "TrackedObstacle", "safety_filter", "sequential_step", "FEASIBLE", "INFEASIBLE",
           "ControlDecision", "MpcConfig", "nominal_mpc", "shift_plan", "tracking_cost",
           "cc_mpc_cbf", "cc_mpc_dc", "det_mpc_cbf"]
