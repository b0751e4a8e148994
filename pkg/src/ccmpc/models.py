"""Robot and obstacle dynamics shared by every controller.

The robot is a discrete control-affine system ``x+ = f(x) + g(x) u``; obstacles
follow a mean motion map plus additive Gaussian noise supplied by the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when a vector or matrix has the wrong shape."""


def _vector(v, size: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != size:
        raise DimensionError(f"{name} must have shape ({size},), got {arr.shape}")
    return arr


class RobotModel:
    """Discrete-time control-affine robot model.

    Subclasses provide ``drift`` and ``input_matrix``; ``step`` is always their
    affine combination so control-affinity holds by construction.
    """

    state_dim: int
    input_dim: int
    dt: float

    def drift(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def input_matrix(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, x, u) -> np.ndarray:
        x = _vector(x, self.state_dim, "x")
        u = _vector(u, self.input_dim, "u")
        return self.drift(x) + self.input_matrix(x) @ u

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(d step/dx, d step/du)`` at ``(x, u)``.

        The default uses central differences; linear models override it.
        """
        x = _vector(x, self.state_dim, "x")
        u = _vector(u, self.input_dim, "u")
        eps = 1e-6
        jx = np.empty((self.state_dim, self.state_dim))
        for i in range(self.state_dim):
            d = np.zeros(self.state_dim)
            d[i] = eps
            jx[:, i] = (self.step(x + d, u) - self.step(x - d, u)) / (2 * eps)
        return jx, self.input_matrix(x)

    @property
    def is_linear(self) -> bool:
        return False


class DoubleIntegrator(RobotModel):
    """Position/velocity model ``x = [p, v]`` with ``A = [[I, dt I], [0, V]]``, ``B = [[0], [I]]``.

    With ``velocity_persistence=False`` (the default) the lower-right block ``V``
    is zero, so the input acts as the commanded velocity of the next step.
    Setting it to True gives the textbook ``V = I``.
    """

    def __init__(self, dt: float = 0.1, dim: int = 3, velocity_persistence: bool = False):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = float(dt)
        self.dim = int(dim)
        self.velocity_persistence = bool(velocity_persistence)
        self.state_dim = 2 * self.dim
        self.input_dim = self.dim
        eye = np.eye(self.dim)
        zero = np.zeros((self.dim, self.dim))
        self.A = np.block([[eye, self.dt * eye], [zero, eye if velocity_persistence else zero]])
        self.B = np.vstack([zero, eye])

    def drift(self, x):
        return self.A @ x

    def input_matrix(self, x):
        return self.B.copy()

    def jacobians(self, x, u):
        return self.A.copy(), self.B.copy()

    @property
    def is_linear(self) -> bool:
        return True

    def __repr__(self) -> str:
        return (f"DoubleIntegrator(dt={self.dt}, dim={self.dim}, "
                f"velocity_persistence={self.velocity_persistence})")


@dataclass(frozen=True)
class CircularObstacleMotion:
    """Mean motion of an obstacle circling ``center`` in the plane ``z = center[2]``.

    The map rotates the current position about the vertical axis through
    ``center`` by ``angular_velocity * dt``. It is linear in ``o``
    (``o+ = F o + (I - F) center``), so noise added to the position is carried
    along rather than pulled back onto the orbit.
    """

    center: tuple[float, float, float] = (0.0, 0.0, 2.0)
    orbit_radius: float = 2.0
    angular_velocity: float = 0.8
    phase: float = 0.0
    dt: float = 0.1

    def __post_init__(self):
        c = tuple(float(v) for v in np.asarray(self.center, dtype=float).ravel())
        if len(c) != 3:
            raise DimensionError("center must be a 3-vector")
        object.__setattr__(self, "center", c)
        if self.orbit_radius < 0:
            raise ValueError("orbit_radius must be non-negative")

    @property
    def altitude(self) -> float:
        return self.center[2]

    def position(self, angle: float) -> np.ndarray:
        cx, cy, cz = self.center
        return np.array([cx + self.orbit_radius * math.cos(angle),
                         cy + self.orbit_radius * math.sin(angle), cz])

    def initial_state(self) -> np.ndarray:
        return self.position(self.phase)

    def angle_of(self, o: np.ndarray) -> float:
        return math.atan2(o[1] - self.center[1], o[0] - self.center[0])

    def matrix(self) -> np.ndarray:
        """Rotation ``F`` of one time step."""
        a = self.angular_velocity * self.dt
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def __call__(self, o) -> np.ndarray:
        o = _vector(o, 3, "obstacle state")
        c = np.asarray(self.center)
        return c + self.matrix() @ (o - c)


def spherical_shape(radius: float, dim: int = 3) -> np.ndarray:
    return np.eye(dim) / radius**2


@dataclass(frozen=True)
class ObstacleSpec:
    """Obstacle with mean motion ``xi``, ellipsoidal shape ``W`` and noise variance."""

    mean_motion: Callable[[np.ndarray], np.ndarray]
    radius: float
    initial_state: np.ndarray
    noise_var: float = 0.0
    shape: np.ndarray | None = None

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        o0 = np.asarray(self.initial_state, dtype=float).ravel()
        object.__setattr__(self, "initial_state", o0)
        W = spherical_shape(self.radius, o0.size) if self.shape is None else np.asarray(self.shape, float)
        if W.shape != (o0.size, o0.size):
            raise DimensionError(f"shape must be {o0.size}x{o0.size}, got {W.shape}")
        if not np.allclose(W, W.T, rtol=0, atol=1e-12):
            raise ValueError("shape matrix W must be symmetric")
        try:
            np.linalg.cholesky(W)
        except np.linalg.LinAlgError as exc:
            raise ValueError("shape matrix W must be positive definite") from exc
        W.setflags(write=False)
        object.__setattr__(self, "shape", W)

    @property
    def state_dim(self) -> int:
        return self.initial_state.size

    @property
    def sigma(self) -> float:
        return math.sqrt(self.noise_var)

    def with_noise(self, noise_var: float) -> "ObstacleSpec":
        return ObstacleSpec(self.mean_motion, self.radius, self.initial_state, noise_var, self.shape)


def robot_step(model: RobotModel, x, u) -> np.ndarray:
    return model.step(x, u)


def obstacle_step(spec: ObstacleSpec, o, noise) -> np.ndarray:
    """One noisy obstacle transition ``xi(o) + noise``; the caller owns the RNG."""
    o = _vector(o, spec.state_dim, "obstacle state")
    noise = _vector(noise, spec.state_dim, "noise")
    return np.asarray(spec.mean_motion(o), dtype=float) + noise


def predict_obstacle_means(spec: ObstacleSpec, o, steps: int) -> list[np.ndarray]:
    """Noise-free predictions ``[xi(o), xi(xi(o)), ...]`` of length ``steps``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cur = _vector(o, spec.state_dim, "obstacle state")
    out = []
    for _ in range(steps):
        cur = np.asarray(spec.mean_motion(cur), dtype=float)
        out.append(cur)
    return out


def rollout(model: RobotModel, x0, inputs: Sequence) -> list[np.ndarray]:
    """States ``[x0, x1, ..., xN]`` produced by applying ``inputs`` in order."""
    x = _vector(x0, model.state_dim, "x0")
    states = [x]
    for u in inputs:
        x = model.step(x, u)
        states.append(x)
    return states


def rollout_array(model: RobotModel, x0, inputs: np.ndarray) -> np.ndarray:
    """Array form of :func:`rollout` with shape ``(N + 1, n)``."""
    return np.array(rollout(model, x0, np.asarray(inputs, dtype=float).reshape(-1, model.input_dim)))


@dataclass
class TrajectorySensitivity:
    """Affine map from a stacked input sequence to the predicted states.

    ``states[i] ~= nominal[i] + blocks[i] @ (U - U_ref)`` with ``U`` flattened
    step-major; exact for linear models.
    """

    nominal: np.ndarray
    u_ref: np.ndarray
    blocks: list[np.ndarray] = field(default_factory=list)

    def state_affine(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(M, c)`` with ``x_i(U) = M @ U + c``."""
        M = self.blocks[i]
        return M, self.nominal[i] - M @ self.u_ref


def trajectory_sensitivity(model: RobotModel, x0, inputs) -> TrajectorySensitivity:
    U = np.asarray(inputs, dtype=float).reshape(-1, model.input_dim)
    N, m = U.shape
    states = rollout_array(model, x0, U)
    blocks = [np.zeros((model.state_dim, N * m))]
    for i in range(N):
        jx, ju = model.jacobians(states[i], U[i])
        M = jx @ blocks[i]
        M[:, i * m:(i + 1) * m] += ju
        blocks.append(M)
    return TrajectorySensitivity(states, U.ravel(), blocks)
