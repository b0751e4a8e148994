"""Sampling oracles for the moment-matched barrier condition."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..barrier import BarrierConfig, barrier_value, cbc_moments
from ..models import ObstacleSpec, RobotModel
from .simulate import make_rng


def sample_cbc(x, o, u, model: RobotModel, spec: ObstacleSpec, barrier_cfg: BarrierConfig, samples: int,
               seed: int) -> np.ndarray:
    """Exact barrier condition ``h(x+, xi(o) + w) - (1 - gamma) h(x, o)`` for ``samples`` draws of ``w``."""
    x = np.asarray(x, dtype=float)
    o = np.asarray(o, dtype=float)
    p_next = barrier_cfg.selector @ model.step(x, u)
    mean = np.asarray(spec.mean_motion(o), dtype=float)
    w = make_rng(seed).normal(0.0, spec.sigma, size=(int(samples), spec.state_dim))
    e = p_next - mean - w
    h_next = np.einsum("ij,jk,ik->i", e, spec.shape, e) - 1.0
    return h_next - (1.0 - barrier_cfg.gamma) * barrier_value(x, o, spec, barrier_cfg)


def empirical_chance(x, o, u, model: RobotModel, spec: ObstacleSpec, barrier_cfg: BarrierConfig,
                     samples: int = 10**6, seed: int = 0) -> float:
    """Fraction of sampled barrier conditions that reach ``zeta``."""
    if samples < 10**4:
        raise ValueError("empirical_chance needs at least 10^4 samples")
    cbc = sample_cbc(x, o, u, model, spec, barrier_cfg, samples, seed)
    return float(np.mean(cbc >= barrier_cfg.zeta))


@dataclass(frozen=True)
class MomentReport:
    mean: float
    var: float
    sample_mean: float
    sample_var: float
    mean_se: float
    var_se: float
    samples: int

    @property
    def mean_z(self) -> float:
        return _zscore(self.sample_mean - self.mean, self.mean_se)

    @property
    def var_z(self) -> float:
        return _zscore(self.sample_var - self.var, self.var_se)

    @property
    def agree(self) -> bool:
        """Closed form and sample moments within three standard errors."""
        return abs(self.mean_z) <= 3.0 and abs(self.var_z) <= 3.0


def _zscore(diff: float, se: float) -> float:
    if se > 0:
        return diff / se
    return 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(diff)) else math.inf


def validate_moments(x, o, u, model: RobotModel, spec: ObstacleSpec, barrier_cfg: BarrierConfig,
                     samples: int = 10**6, seed: int = 0) -> MomentReport:
    """Compare the closed-form mean and variance of the barrier condition with sample moments.

    Standard errors: ``s / sqrt(n)`` for the mean, and for the variance the
    delta-method value ``sqrt((m4 - s^4) / n)`` with ``m4`` the fourth central moment.
    """
    if samples < 10**5:
        raise ValueError("validate_moments needs at least 10^5 samples")
    mom = cbc_moments(x, o, model, spec, barrier_cfg)
    cbc = sample_cbc(x, o, u, model, spec, barrier_cfg, samples, seed)
    n = cbc.size
    m = float(np.mean(cbc))
    c = cbc - m
    v = float(np.mean(c * c))
    m4 = float(np.mean(c**4))
    return MomentReport(mom.mean_at(u), mom.var_at(u), m, v * n / (n - 1), math.sqrt(v / n),
                        math.sqrt(max(m4 - v * v, 0.0) / n), n)


def random_instance(rng: np.random.Generator, scenario, sigma2: float = 0.1):
    """Random ``(x, o, u, spec)`` around the first obstacle of ``scenario``.

    The robot is placed 1 to 3 radii from the obstacle with a random velocity,
    and ``u`` is drawn inside the input box.
    """
    spec = scenario.obstacle_specs()[0].with_noise(sigma2)
    ob = scenario.obstacles[0]
    o = spec.mean_motion.position(rng.uniform(0.0, 2.0 * math.pi))
    d = rng.normal(size=3)
    p = o + d / np.linalg.norm(d) * ob.radius * rng.uniform(1.0, 3.0)
    x = np.concatenate([p, rng.uniform(-1.0, 1.0, 3)])
    u = rng.uniform(-scenario.input_bound, scenario.input_bound, 3)
    return x, o, u, spec
