import numpy as np
import pytest

from ccmpc.barrier import BarrierConfig
from ccmpc.control import MpcConfig, TrackedObstacle
from ccmpc.experiments import default_scenario, make_rng
from ccmpc.models import (CircularObstacleMotion, DoubleIntegrator, ObstacleSpec, RobotModel, rollout_array,
                          trajectory_sensitivity)


class Identity:
    """Static obstacle: xi(o) = o."""

    def __call__(self, o):
        return np.asarray(o, dtype=float).copy()


class DirectPosition(RobotModel):
    """x+ = x + u on the position itself (f = identity, g = I)."""

    def __init__(self, dim=3):
        self.state_dim = self.input_dim = dim
        self.dt = 1.0

    def drift(self, x):
        return np.asarray(x, dtype=float).copy()

    def input_matrix(self, x):
        return np.eye(self.state_dim)

    def jacobians(self, x, u):
        return np.eye(self.state_dim), np.eye(self.state_dim)

    @property
    def is_linear(self):
        return True


@pytest.fixture
def model():
    return DoubleIntegrator(0.1)


@pytest.fixture
def scenario():
    return default_scenario()


@pytest.fixture
def bcfg():
    return BarrierConfig(0.5, 0.97, 0.0)


def circle_spec(sigma2=0.1, radius=0.8, center=(0.0, 0.0, 2.0), phase=0.0):
    motion = CircularObstacleMotion(center, 2.0, 0.8, phase, 0.1)
    return ObstacleSpec(motion, radius, motion.initial_state(), sigma2)


def static_spec(position, sigma2=0.0, radius=0.8):
    return ObstacleSpec(Identity(), radius, np.asarray(position, float), sigma2)


def tracked_static(position, sigma2=0.0, radius=0.8):
    return TrackedObstacle(static_spec(position, sigma2, radius), np.asarray(position, float))


def hover_config(target=(0.0, 0.0, 2.0), horizon=10):
    """Tracking config whose reference is a fixed hover point."""
    ref = np.concatenate([np.asarray(target, float), np.zeros(3)])
    return MpcConfig(lambda k: ref, horizon)


def random_state(rng, spread=3.0):
    return np.concatenate([rng.uniform(-spread, spread, 3), rng.uniform(-1.0, 1.0, 3)])


@pytest.fixture
def rng():
    return make_rng(12345)


def aux_function(hc, U_ref):
    """Map ``V -> beta (||S x_i - o_i||_W^2 - 1)`` over the auxiliary cones of the subproblem built at ``U_ref``."""
    sens = trajectory_sensitivity(hc.model, hc.x_k, np.reshape(U_ref, (hc.N, hc.m)))
    keep = hc.selection(U_ref)
    mask = hc.constant_mask()
    # positions that no input can move carry no auxiliary variable
    pairs = [(i, j) for j in range(hc.count) for i in range(hc.N)
             if not mask[i, j] and keep[i, j] and np.any(hc.S @ sens.state_affine(i)[0])]
    shapes = [ob.spec.shape for ob in hc.obstacles]

    def values(V):
        P = rollout_array(hc.model, hc.x_k, np.reshape(V, (hc.N, hc.m))) @ hc.S.T
        out = np.empty(len(pairs))
        for n, (i, j) in enumerate(pairs):
            e = P[i] - hc.means[j][i]
            out[n] = hc.beta * (e @ shapes[j] @ e - 1.0)
        return out

    return values


def aux_values(hc, V, U_ref):
    return aux_function(hc, U_ref)(V)
