"""Hyperellipsoid barrier functions and their chance-constrained conditions.

The barrier between robot state ``x`` and obstacle position ``o`` is
``h(x, o) = ||S x - o||_W^2 - 1`` where ``S`` selects the position sub-state.
Under additive obstacle noise the barrier condition is a quadratic form in a
Gaussian; its first two moments are matched and the chance constraint is
replaced by ``E - c(delta) sqrt(Var) >= zeta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import DimensionError, ObstacleSpec, RobotModel

#: margins at or above this value count as satisfied when classifying solver output
FEASIBILITY_TOL = 1e-6


def position_selector(state_dim: int, pos_dim: int = 3) -> np.ndarray:
    S = np.zeros((pos_dim, state_dim))
    S[:, :pos_dim] = np.eye(pos_dim)
    return S


@dataclass(frozen=True)
class BarrierConfig:
    gamma: float = 0.5
    delta: float = 0.97
    zeta: float = 0.0
    selector: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma={self.gamma} violates 0 < gamma <= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta={self.delta} violates 0 < delta < 1")
        if self.zeta < 0.0:
            raise ValueError(f"zeta={self.zeta} violates zeta >= 0")
        S = position_selector(6) if self.selector is None else np.array(self.selector, dtype=float)
        if S.ndim != 2:
            raise DimensionError("selector must be a matrix")
        ones_per_row = (S == 1.0).sum(axis=1)
        if not (np.all(ones_per_row == 1) and np.all((S == 0.0) | (S == 1.0))):
            raise ValueError("selector must have exactly one 1 per row and zeros elsewhere")
        S.setflags(write=False)
        object.__setattr__(self, "selector", S)

    def replace(self, **changes) -> "BarrierConfig":
        vals = dict(gamma=self.gamma, delta=self.delta, zeta=self.zeta, selector=self.selector)
        vals.update(changes)
        return BarrierConfig(**vals)


def _check(x, o, spec: ObstacleSpec, cfg: BarrierConfig) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    o = np.asarray(o, dtype=float)
    S = cfg.selector
    if x.shape != (S.shape[1],):
        raise DimensionError(f"state must have shape ({S.shape[1]},), got {x.shape}")
    if o.shape != (S.shape[0],) or spec.state_dim != S.shape[0]:
        raise DimensionError(f"obstacle state must have shape ({S.shape[0]},), got {o.shape}")
    return x, o


def barrier_value(x, o, spec: ObstacleSpec, cfg: BarrierConfig) -> float:
    x, o = _check(x, o, spec, cfg)
    e = cfg.selector @ x - o
    return float(e @ spec.shape @ e - 1.0)


def cbc_deterministic(x, u, o, model: RobotModel, spec: ObstacleSpec, cfg: BarrierConfig) -> float:
    """Noise-free barrier condition ``h(x+, xi(o)) - (1 - gamma) h(x, o)``."""
    x, o = _check(x, o, spec, cfg)
    x_next = model.step(x, u)
    o_next = np.asarray(spec.mean_motion(o), dtype=float)
    return barrier_value(x_next, o_next, spec, cfg) - (1.0 - cfg.gamma) * barrier_value(x, o, spec, cfg)


def quadratic_form_moments(mu, Sigma, A) -> tuple[float, float]:
    """Mean and variance of ``z' A z`` for ``z ~ N(mu, Sigma)`` and symmetric ``A``."""
    mu = np.asarray(mu, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    A = np.asarray(A, dtype=float)
    p = mu.size
    if Sigma.shape != (p, p) or A.shape != (p, p):
        raise DimensionError("mu, Sigma and A must have matching dimensions")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12):
        raise ValueError("A must be symmetric")
    AS = A @ Sigma
    mean = np.trace(AS) + mu @ A @ mu
    var = 2.0 * np.trace(AS @ AS) + 4.0 * mu @ AS @ A @ mu
    return float(mean), float(var)


@dataclass(frozen=True)
class CbcMoments:
    """Mean and variance of the barrier condition as quadratics in the input.

    ``mean_at(u) = u'Phi u + 2 m'u + s`` and ``var_at(u) = u'H u + 2 n'u + d``.
    """

    Phi: np.ndarray
    H: np.ndarray
    m_vec: np.ndarray
    n_vec: np.ndarray
    s: float
    d: float

    def mean_at(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.Phi @ u + 2.0 * self.m_vec @ u + self.s)

    def var_at(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(u @ self.H @ u + 2.0 * self.n_vec @ u + self.d)

    def mean_grad(self, u) -> np.ndarray:
        return 2.0 * (self.Phi @ np.asarray(u, dtype=float) + self.m_vec)

    def std_factor(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Return ``(A, b, k)`` with ``var_at(u) = ||A u + b||^2 + k`` and ``k >= 0``.

        Built from an eigendecomposition of ``H``; ``k`` is clipped at zero so the
        norm never under-estimates the standard deviation by more than rounding.
        """
        lam, V = np.linalg.eigh(self.H)
        scale = max(1.0, float(np.max(np.abs(lam))) if lam.size else 1.0)
        keep = lam > 1e-14 * scale
        root = np.sqrt(lam[keep])
        A = root[:, None] * V[:, keep].T
        b = (V[:, keep].T @ self.n_vec) / root
        k = max(self.d - float(b @ b), 0.0)
        return A, b, k


def moments_from_affine(E, e0, W, noise_var: float, gamma: float, h_prev: float) -> CbcMoments:
    """Moments of ``||E u + e0 + w||_W^2 - (1 - gamma) h_prev - 1`` with ``w ~ N(0, sigma^2 I)``.

    ``E u + e0`` is the difference between the robot's next position and the
    obstacle's predicted mean. This is the common core of :func:`cbc_moments`
    and of the horizon-stacked constraints built by the controllers.
    """
    E = np.asarray(E, dtype=float)
    e0 = np.asarray(e0, dtype=float)
    WE = W @ E
    We0 = W @ e0
    s2 = float(noise_var)
    Phi = E.T @ WE
    m_vec = E.T @ We0
    H = 4.0 * s2 * (WE.T @ WE)
    n_vec = 4.0 * s2 * (WE.T @ We0)
    s = float(e0 @ We0 + s2 * np.trace(W) - (1.0 - gamma) * h_prev - 1.0)
    d = float(4.0 * s2 * (We0 @ We0) + 2.0 * s2**2 * np.trace(W.T @ W))
    return CbcMoments(0.5 * (Phi + Phi.T), 0.5 * (H + H.T), m_vec, n_vec, s, d)


def cbc_moments(x, o, model: RobotModel, spec: ObstacleSpec, cfg: BarrierConfig) -> CbcMoments:
    """Gaussian moment-matched barrier condition at state ``x`` as a function of ``u``."""
    x, o = _check(x, o, spec, cfg)
    S = cfg.selector
    f = model.drift(x)
    g = model.input_matrix(x)
    xi = np.asarray(spec.mean_motion(o), dtype=float)
    return moments_from_affine(S @ g, S @ f - xi, spec.shape, spec.noise_var, cfg.gamma,
                               barrier_value(x, o, spec, cfg))


def inverse_erf(y: float) -> float:
    """Solve ``erf(x) = y`` by Newton's method to 1e-12 absolute accuracy."""
    y = float(y)
    if not -1.0 < y < 1.0:
        raise ValueError(f"inverse_erf requires -1 < y < 1, got {y}")
    if y == 0.0:
        return 0.0
    # Giles-style log initial guess, good to ~1e-3 over the whole range
    w = -math.log((1.0 - y) * (1.0 + y))
    a = 0.147
    t = 2.0 / (math.pi * a) - 0.5 * w
    x = math.copysign(math.sqrt(math.sqrt(t * t + w / a) - t), y)
    for _ in range(100):
        err = math.erf(x) - y
        step = err / (2.0 / math.sqrt(math.pi) * math.exp(-x * x))
        x -= step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return x


def confidence_scale(delta: float) -> float:
    """``c(delta) = sqrt(2) erf^-1(2 delta - 1)``, the standard normal delta-quantile."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2.0) * inverse_erf(2.0 * delta - 1.0)


def chance_margin(moments: CbcMoments, u, cfg: BarrierConfig) -> float:
    """Deterministic chance-constraint margin; the constraint holds iff it is >= 0."""
    var = max(moments.var_at(u), 0.0)
    return moments.mean_at(u) - confidence_scale(cfg.delta) * math.sqrt(var) - cfg.zeta


@dataclass(frozen=True)
class SocConstraint:
    """Second-order cone constraint ``||A u + b|| <= c'u + e``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    e: float

    def residual(self, u) -> float:
        """``c'u + e - ||A u + b||``; non-negative iff satisfied."""
        u = np.asarray(u, dtype=float)
        lhs = float(np.linalg.norm(self.A @ u + self.b)) if self.b.size else 0.0
        return float(self.c @ u + self.e) - lhs

    def satisfied(self, u, tol: float = 0.0) -> bool:
        return self.residual(u) >= -tol

    @property
    def dim(self) -> int:
        return self.c.size


def convexified_constraint(moments: CbcMoments, u_ref, cfg: BarrierConfig) -> SocConstraint:
    """Convex inner approximation of the chance constraint around ``u_ref``.

    The convex mean is replaced by its tangent at ``u_ref`` (an under-estimator)
    and the standard deviation is kept exactly as a Euclidean norm, so every
    point satisfying the returned cone also satisfies :func:`chance_margin` >= 0.
    """
    c = confidence_scale(cfg.delta)
    if c < 0.0:
        raise ValueError("convexification requires delta >= 0.5")
    u_ref = np.asarray(u_ref, dtype=float)
    grad = moments.mean_grad(u_ref)
    e = moments.mean_at(u_ref) - grad @ u_ref - cfg.zeta
    A, b, k = moments.std_factor()
    if c == 0.0 or (not A.size and k == 0.0):
        return SocConstraint(np.zeros((0, u_ref.size)), np.zeros(0), grad, float(e))
    A_full = c * np.vstack([A, np.zeros((1, u_ref.size))])
    b_full = c * np.append(b, math.sqrt(k))
    return SocConstraint(A_full, b_full, grad, float(e))


def feasibility_bound(x, o, u, model: RobotModel, spec: ObstacleSpec, cfg: BarrierConfig) -> float:
    """Upper bound on :func:`chance_margin` that is affine in the noise variance.

    Returns ``D - zeta + (tr W - sqrt(2) c(delta) sqrt(tr W'W)) sigma^2`` where ``D``
    is the noise-free barrier condition. It only drops the non-negative,
    input-dependent part of the variance, so it holds whenever ``c(delta) >= 0``.
    The coefficient of ``sigma^2`` is negative once
    ``c(delta) > tr W / sqrt(2 tr W'W)``: more noise then shrinks the safe set.
    For ``delta < 0.5`` the exact margin is returned.
    """
    x, o = _check(x, o, spec, cfg)
    W = spec.shape
    xi = np.asarray(spec.mean_motion(o), dtype=float)
    e = cfg.selector @ model.step(x, u) - xi
    D = float(e @ W @ e) - (1.0 - cfg.gamma) * barrier_value(x, o, spec, cfg) - 1.0
    c = confidence_scale(cfg.delta)
    if c < 0.0:
        return chance_margin(cbc_moments(x, o, model, spec, cfg), u, cfg)
    coeff = float(np.trace(W)) - math.sqrt(2.0) * c * math.sqrt(np.trace(W.T @ W))
    return D - cfg.zeta + coeff * spec.noise_var
