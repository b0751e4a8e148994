"""Scenario description for the circular-tracking, two-orbiting-obstacle experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..barrier import BarrierConfig
from ..control import MpcConfig, TrackedObstacle
from ..models import CircularObstacleMotion, DoubleIntegrator, ObstacleSpec

CONTROLLERS = ("nominal", "det-mpc-cbf", "cc-mpc-cbf", "cc-mpc-dc", "sequential")
REFERENCE_ARGS = ("seconds", "step_index")


@dataclass(frozen=True)
class ObstacleConfig:
    center: tuple[float, float, float] = (0.0, 0.0, 2.0)
    orbit_radius: float = 2.0
    omega: float = 0.8
    phase: float = 0.0
    radius: float = 0.8
    sigma2: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if len(self.center) != 3:
            raise ValueError("obstacle center must have 3 components")
        if self.radius <= 0:
            raise ValueError("obstacle radius must be > 0")
        if self.orbit_radius < 0:
            raise ValueError("orbit_radius must be >= 0")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")


def _default_obstacles() -> tuple[ObstacleConfig, ...]:
    # orbits of radius 2 centred beside the start point: both cross the
    # reference circle, and the robot does not begin 2 units from each obstacle
    return (ObstacleConfig(center=(2.0, 0.0, 2.0), omega=0.8, phase=0.0),
            ObstacleConfig(center=(-2.0, 0.0, 2.0), omega=0.4, phase=math.pi))


@dataclass(frozen=True)
class Scenario:
    # model
    dt: float = 0.1
    velocity_persistence: bool = False
    start: tuple[float, float, float] = (0.0, 0.0, 2.0)
    # reference r_d = [a sin(w t), a cos(w t), z]
    amplitude: float = 2.0
    rate: float = 0.4
    altitude: float = 2.0
    reference_arg: str = "seconds"
    obstacles: tuple[ObstacleConfig, ...] = field(default_factory=_default_obstacles)
    # mpc
    horizon: int = 15
    p_weight: float = 1000.0
    q_weight: float = 1000.0
    r_weight: float = 1.0
    state_bound: float = 5.0
    input_bound: float = 4.0
    # barrier
    gamma: float = 0.5
    delta: float = 0.97
    zeta: float = 0.0
    # run
    k_max: int = 200
    seed: int = 0
    trials: int = 20
    controller: str = "cc-mpc-cbf"
    filter_eps: float = 1e-4
    filter_max_iter: int = 20

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.reference_arg not in REFERENCE_ARGS:
            raise ValueError(f"reference_arg must be one of {REFERENCE_ARGS}")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.k_max < 1 or self.trials < 1:
            raise ValueError("k_max and trials must be >= 1")
        if min(self.p_weight, self.q_weight) < 0 or self.r_weight <= 0:
            raise ValueError("weights must satisfy P, Q >= 0 and R > 0")
        if self.state_bound <= 0 or self.input_bound <= 0:
            raise ValueError("bounds must be > 0")
        if self.filter_eps <= 0 or self.filter_max_iter < 1:
            raise ValueError("filter_eps must be > 0 and filter_max_iter >= 1")
        self.barrier_config()  # validates 0 < gamma <= 1, 0 < delta < 1, zeta >= 0

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def with_noise(self, sigma2: float) -> "Scenario":
        return replace(self, obstacles=tuple(replace(o, sigma2=float(sigma2)) for o in self.obstacles))

    # builders
    def model(self) -> DoubleIntegrator:
        return DoubleIntegrator(self.dt, 3, self.velocity_persistence)

    def reference_position(self, k: int) -> np.ndarray:
        t = k * self.dt if self.reference_arg == "seconds" else float(k)
        return np.array([self.amplitude * math.sin(self.rate * t),
                         self.amplitude * math.cos(self.rate * t), self.altitude])

    def reference(self, k: int) -> np.ndarray:
        """Reference state: position and the forward-difference velocity."""
        p = self.reference_position(k)
        v = (self.reference_position(k + 1) - p) / self.dt
        return np.concatenate([p, v])

    def mpc_config(self) -> MpcConfig:
        n, m = 6, 3
        return MpcConfig(self.reference, self.horizon, self.p_weight * np.eye(n), self.q_weight * np.eye(n),
                         self.r_weight * np.eye(m), np.full(n, -self.state_bound), np.full(n, self.state_bound),
                         np.full(m, -self.input_bound), np.full(m, self.input_bound))

    def barrier_config(self) -> BarrierConfig:
        return BarrierConfig(self.gamma, self.delta, self.zeta)

    def obstacle_specs(self) -> list[ObstacleSpec]:
        specs = []
        for ob in self.obstacles:
            motion = CircularObstacleMotion(ob.center, ob.orbit_radius, ob.omega, ob.phase, self.dt)
            specs.append(ObstacleSpec(motion, ob.radius, motion.initial_state(), ob.sigma2))
        return specs

    def initial_state(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.start), np.zeros(3)])

    def tracked(self, positions) -> list[TrackedObstacle]:
        return [TrackedObstacle(s, np.asarray(p, float)) for s, p in zip(self.obstacle_specs(), positions)]


def default_scenario(**changes) -> Scenario:
    return Scenario(**changes)
