"""Horizon-stacked chance constraints and their convex inner approximations.

For obstacle ``j`` and horizon step ``i`` the constraint reads

    E[CBC] - c(delta) sqrt(Var[CBC]) >= zeta,
    E[CBC]   = ||p_{i+1}(U) - o_{j,i+1}||_W^2 + sigma^2 tr W - 1 - (1 - gamma) h(x_i(U), o_{j,i}),
    Var[CBC] = 4 sigma^2 ||W (p_{i+1}(U) - o_{j,i+1})||^2 + 2 sigma^4 tr(W'W),

with ``o_{j,i}`` the noise-free predicted obstacle means. The first quadratic
is replaced by its tangent and the concave ``-(1 - gamma) h`` term is kept exact
through an epigraph variable, which gives a second-order cone inner
approximation.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from ..barrier import BarrierConfig, SocConstraint, confidence_scale
from ..models import ObstacleSpec, RobotModel, predict_obstacle_means, rollout_array, trajectory_sensitivity
from ..solve import ConicProblem, Convexification


class TrackedObstacle(NamedTuple):
    """An obstacle model together with its latest measured position."""

    spec: ObstacleSpec
    position: np.ndarray


def as_tracked(obstacles) -> list[TrackedObstacle]:
    return [ob if isinstance(ob, TrackedObstacle) else TrackedObstacle(ob[0], np.asarray(ob[1], float))
            for ob in obstacles]


class HorizonChance:
    """Chance constraints of one MPC problem instance (fixed ``x_k`` and obstacle measurements)."""

    def __init__(self, model: RobotModel, x_k, obstacles: Sequence, barrier_cfg: BarrierConfig,
                 horizon: int, screen: float = math.inf):
        self.model = model
        self.x_k = np.asarray(x_k, dtype=float)
        self.obstacles = as_tracked(obstacles)
        self.cfg = barrier_cfg
        self.N = int(horizon)
        #: convex subproblems leave out constraints whose true margin at the reference exceeds this
        self.screen = float(screen)
        self.m = model.input_dim
        self.S = barrier_cfg.selector
        self.beta = 1.0 - barrier_cfg.gamma
        noisy = any(ob.spec.noise_var > 0 for ob in self.obstacles)
        self.c = confidence_scale(barrier_cfg.delta)
        if noisy and self.c < 0:
            raise ValueError("chance constraints require delta >= 0.5")
        # predicted means o_{j,0..N}, index 0 is the measurement itself
        self.means = [np.vstack([ob.position] + predict_obstacle_means(ob.spec, ob.position, self.N))
                      for ob in self.obstacles]
        self._const_mask = None

    @property
    def count(self) -> int:
        return len(self.obstacles)

    def margins(self, U) -> np.ndarray:
        """True chance margins, shape ``(N, number of obstacles)``, from an exact rollout."""
        U = np.asarray(U, dtype=float).reshape(self.N, self.m)
        X = rollout_array(self.model, self.x_k, U)
        pos = X @ self.S.T
        out = np.empty((self.N, self.count))
        for j, ob in enumerate(self.obstacles):
            W = ob.spec.shape
            s2 = ob.spec.noise_var
            o = self.means[j]
            e = pos[1:] - o[1:]
            eh = pos[:-1] - o[:-1]
            We = e @ W
            mean = np.einsum("ij,ij->i", We, e) + s2 * np.trace(W) - 1.0
            mean -= self.beta * (np.einsum("ij,jk,ik->i", eh, W, eh) - 1.0)
            var = 4.0 * s2 * np.einsum("ij,ij->i", We, We) + 2.0 * s2**2 * np.trace(W.T @ W)
            out[:, j] = mean - self.c * np.sqrt(np.maximum(var, 0.0)) - self.cfg.zeta
        return out

    def constant_mask(self) -> np.ndarray:
        """Boolean ``(N, J)`` mask of constraints that no input sequence can change."""
        if self._const_mask is None:
            sens = trajectory_sensitivity(self.model, self.x_k, np.zeros((self.N, self.m)))
            mask = np.zeros((self.N, self.count), dtype=bool)
            for i in range(self.N):
                moves_next = np.any(self.S @ sens.blocks[i + 1])
                moves_prev = self.beta > 0 and np.any(self.S @ sens.blocks[i])
                mask[i, :] = not (moves_next or moves_prev)
            self._const_mask = mask
        return self._const_mask

    def constant_violation(self, tol: float) -> tuple[int, int] | None:
        """First ``(i, j)`` whose input-independent margin is below ``-tol``, if any."""
        mask = self.constant_mask()
        if not mask.any():
            return None
        marg = self.margins(np.zeros(self.N * self.m))
        bad = np.argwhere(mask & (marg < -tol))
        return (int(bad[0][0]), int(bad[0][1])) if bad.size else None

    def selection(self, U_ref, include=None) -> np.ndarray:
        """Boolean ``(N, J)`` mask of constraints a subproblem at ``U_ref`` represents.

        Input-independent constraints count as represented (they are checked
        separately); the rest are kept when their true margin is below
        ``screen`` or when ``include`` forces them.
        """
        keep = self.constant_mask().copy()
        if math.isinf(self.screen):
            keep[:] = True
        else:
            keep |= self.margins(U_ref) < self.screen
        if include is not None:
            keep |= np.asarray(include, dtype=bool).reshape(keep.shape)
        return keep

    def soc_constraints(self, U_ref, include=None) -> tuple[list[SocConstraint], int, list[int]]:
        """Cone constraints over ``[U, t]``: returns ``(cones, number of t, elastic indices)``.

        Input-independent constraints are omitted (see :meth:`constant_violation`),
        as are those left out by :meth:`selection`.
        """
        U_ref = np.asarray(U_ref, dtype=float).ravel()
        keep = self.selection(U_ref, include)
        nU = U_ref.size
        sens = trajectory_sensitivity(self.model, self.x_k, U_ref.reshape(self.N, self.m))
        mask = self.constant_mask()
        specs = []  # (chance pieces, aux pieces or None)
        n_aux = 0
        for j, ob in enumerate(self.obstacles):
            W = ob.spec.shape
            s2 = ob.spec.noise_var
            sig = math.sqrt(s2)
            L = np.linalg.cholesky(W)
            o = self.means[j]
            for i in range(self.N):
                if mask[i, j] or not keep[i, j]:
                    continue
                M1, c1 = sens.state_affine(i + 1)
                E = self.S @ M1
                e0 = self.S @ c1 - o[i + 1]
                r = E @ U_ref + e0
                grad = 2.0 * (E.T @ (W @ r))
                const = float(r @ W @ r) + s2 * np.trace(W) - 1.0 - float(grad @ U_ref) - self.cfg.zeta
                aux = None
                if self.beta > 0:
                    M0, c0 = sens.state_affine(i)
                    Eh = self.S @ M0
                    eh0 = self.S @ c0 - o[i]
                    if np.any(Eh):
                        aux = (n_aux, 2.0 * self.beta * (L.T @ Eh), 2.0 * self.beta * (L.T @ eh0))
                        n_aux += 1
                    else:
                        const -= self.beta * (float(eh0 @ W @ eh0) - 1.0)
                if sig > 0 and self.c > 0:
                    A = np.vstack([2.0 * sig * self.c * (W @ E), np.zeros((1, nU))])
                    b = np.append(2.0 * sig * self.c * (W @ e0), self.c * math.sqrt(2.0 * s2**2 * np.trace(W.T @ W)))
                else:
                    A, b = np.zeros((0, nU)), np.zeros(0)
                specs.append((A, b, grad, const, aux))
        tot = nU + n_aux
        cones, elastic = [], []
        for A, b, grad, const, aux in specs:
            c = np.zeros(tot)
            c[:nU] = grad
            if aux is not None:
                c[nU + aux[0]] = -1.0
            elastic.append(len(cones))
            cones.append(SocConstraint(np.hstack([A, np.zeros((A.shape[0], n_aux))]), b, c, const))
        for A, b, grad, const, aux in specs:
            if aux is None:
                continue
            t, Ah, bh = aux
            # ||[2 beta L'(Eh U + eh0); t]|| <= 2 beta + t  <=>  t >= beta (||.||_W^2 - 1)
            rows = np.zeros((Ah.shape[0] + 1, tot))
            rows[:-1, :nU] = Ah
            rows[-1, nU + t] = 1.0
            c = np.zeros(tot)
            c[nU + t] = 1.0
            cones.append(SocConstraint(rows, np.append(bh, 0.0), c, 2.0 * self.beta))
        return cones, n_aux, elastic

    def convexify(self, U_ref, H, f, r, lower, upper, G=None, h=None, include=None) -> Convexification:
        """Convex subproblem ``min 1/2 U'HU + f'U + r`` under the inner-approximated constraints."""
        cones, n_aux, elastic = self.soc_constraints(U_ref, include)
        nU = f.size
        tot = nU + n_aux
        P = np.zeros((tot, tot))
        P[:nU, :nU] = H
        q = np.concatenate([f, np.zeros(n_aux)])
        lo = np.concatenate([lower, np.full(n_aux, -np.inf)])
        hi = np.concatenate([upper, np.full(n_aux, np.inf)])
        if G is not None and G.shape[0]:
            G = np.hstack([G, np.zeros((G.shape[0], n_aux))])
        else:
            G, h = None, None
        included = None if math.isinf(self.screen) else self.selection(U_ref, include).ravel()
        return Convexification(ConicProblem(P, q, r, cones, lo, hi, G, h), elastic, included)
