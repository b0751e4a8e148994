"""Dense primal-dual interior-point solver for convex QPs with second-order cones.

Solves::

    minimize    1/2 z'P z + q'z + r
    subject to  ||A_j z + b_j|| <= c_j'z + e_j     (second-order cones)
                G z <= h                           (linear rows)
                lower <= z <= upper                (boxes)

using Mehrotra predictor-corrector steps with Nesterov-Todd scaling. The
problems produced by the controllers have at most a few hundred variables,
so everything is dense; cone blocks of equal size are processed as stacks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from ..barrier import SocConstraint

#: KKT residual at which a stalled solve is still reported optimal
ACCEPT_TOL = 1e-6
#: the dual residual of a stalled solve may be this many times looser; it loses
#: accuracy first when large penalty duals cancel in ``P x + q + G'z``
DUAL_ACCEPT_FACTOR = 10.0
#: cap on iterative-refinement passes per Newton solve
REFINE_ROUNDS = 5
#: iterations without a new best KKT residual (once near-optimal) before giving up
STALL_ITERS = 5


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"


@dataclass
class ConicProblem:
    P: np.ndarray
    q: np.ndarray
    r: float = 0.0
    soc_constraints: list[SocConstraint] = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    #: indices of elastic slack variables, if the builder added any
    slack: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {self.P.shape}")
        if not np.allclose(self.P, self.P.T, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(self.P).max(initial=0))):
            raise ValueError("objective matrix P must be symmetric")
        self.P = 0.5 * (self.P + self.P.T)
        if n:
            lam_min = np.linalg.eigvalsh(self.P)[0]
            if lam_min < -1e-9 * max(1.0, np.abs(self.P).max()):
                raise ValueError(f"objective matrix P is not PSD (min eigenvalue {lam_min:.3e})")
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).copy()
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the decision dimension")
        if np.any(self.lower > self.upper):
            raise ValueError("box bounds require lower <= upper elementwise")
        if self.G is None:
            self.G = np.zeros((0, n))
            self.h = np.zeros(0)
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float)).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.G.shape[0] != self.h.size:
            raise ValueError("G and h have inconsistent row counts")
        for con in self.soc_constraints:
            if con.c.size != n or (con.A.size and con.A.shape[1] != n):
                raise ValueError("cone constraint dimension does not match the decision")

    @property
    def dim(self) -> int:
        return self.q.size

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.P @ z + self.q @ z + self.r)

    def max_violation(self, z) -> float:
        z = np.asarray(z, dtype=float)
        viol = [0.0]
        if self.G.size:
            viol.append(float(np.max(self.G @ z - self.h)))
        viol.append(float(np.max(self.lower - z, initial=-np.inf)))
        viol.append(float(np.max(z - self.upper, initial=-np.inf)))
        if self.soc_constraints:
            A, b, C, e, segment = self._stacked_cones()
            norms = np.sqrt(np.bincount(segment, (A @ z + b) ** 2, minlength=e.size))
            viol.append(float(np.max(norms - C @ z - e)))
        return max(viol)

    def _stacked_cones(self):
        """All cones as one row block, rebuilt whenever the constraint list changes."""
        key = tuple(map(id, self.soc_constraints))
        cache = getattr(self, "_cone_cache", None)
        if cache is None or cache[0] != key:
            n = self.dim
            cons = self.soc_constraints
            rows = [con.A.reshape(-1, n) if con.b.size else np.zeros((0, n)) for con in cons]
            sizes = np.array([r.shape[0] for r in rows])
            segment = np.repeat(np.arange(len(cons)), sizes)
            stacked = (np.vstack(rows), np.concatenate([con.b.ravel() if con.b.size else np.zeros(0) for con in cons]),
                       np.array([con.c for con in cons]), np.array([con.e for con in cons], dtype=float), segment)
            cache = self._cone_cache = (key, stacked)
        return cache[1]


@dataclass
class SolveResult:
    status: Status
    decision: np.ndarray
    objective_value: float
    iterations: int
    max_violation: float
    kkt_residual: float = float("nan")
    duals: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


class _Cones:
    """Index bookkeeping for one LP block followed by second-order cone blocks."""

    def __init__(self, l: int, soc_dims: list[int]):
        self.l = l
        self.groups = []  # (dim, index array of shape (nblocks, dim))
        offset = l
        by_dim: dict[int, list[np.ndarray]] = {}
        for d in soc_dims:
            by_dim.setdefault(d, []).append(np.arange(offset, offset + d))
            offset += d
        for d, blocks in sorted(by_dim.items()):
            self.groups.append((d, np.array(blocks)))
        self.m = offset
        self.degree = l + len(soc_dims)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[:self.l] = 1.0
        for _, idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e

    def min_eig(self, v) -> float:
        vals = [np.min(v[:self.l], initial=np.inf)]
        for _, idx in self.groups:
            b = v[idx]
            vals.append(np.min(b[:, 0] - np.linalg.norm(b[:, 1:], axis=1)))
        return float(min(vals))

    def prod(self, u, v) -> np.ndarray:
        out = np.empty(self.m)
        out[:self.l] = u[:self.l] * v[:self.l]
        for _, idx in self.groups:
            ub, vb = u[idx], v[idx]
            out[idx[:, 0]] = np.einsum("bi,bi->b", ub, vb)
            out[idx[:, 1:]] = ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
        return out

    def inv_prod(self, lam, y) -> np.ndarray:
        """Solve ``lam o x = y`` for ``x``."""
        out = np.empty(self.m)
        out[:self.l] = y[:self.l] / lam[:self.l]
        for _, idx in self.groups:
            lb, yb = lam[idx], y[idx]
            l0, l1 = lb[:, 0], lb[:, 1:]
            det = l0**2 - np.einsum("bi,bi->b", l1, l1)
            x0 = (l0 * yb[:, 0] - np.einsum("bi,bi->b", l1, yb[:, 1:])) / det
            out[idx[:, 0]] = x0
            out[idx[:, 1:]] = (yb[:, 1:] - x0[:, None] * l1) / l0[:, None]
        return out

    def max_step(self, v, d) -> float:
        """Largest ``alpha`` (capped at 1e30) keeping ``v + alpha d`` in the cone."""
        alpha = 1e30
        if self.l:
            dl = d[:self.l]
            neg = dl < 0
            if neg.any():
                alpha = float(np.min(v[:self.l][neg] / -dl[neg]))
        for _, idx in self.groups:
            vb, db = v[idx], d[idx]
            v0, d0, v1, d1 = vb[:, 0], db[:, 0], vb[:, 1:], db[:, 1:]
            a = d0 * d0 - (d1 * d1).sum(axis=1)
            b = 2.0 * (v0 * d0 - (v1 * d1).sum(axis=1))
            c = np.maximum(v0 * v0 - (v1 * v1).sum(axis=1), 0.0)
            # q(t) = a t^2 + b t + c starts positive; find its first positive root
            disc = b * b - 4.0 * a * c
            real = disc >= 0.0
            sq = np.sqrt(np.where(real, disc, 0.0))
            qq = -0.5 * (b + np.copysign(sq, b))
            safe_q = np.where(qq == 0.0, 1.0, qq)
            safe_a = np.where(a == 0.0, 1.0, a)
            r1 = np.where(a == 0.0, np.inf, qq / safe_a)
            r2 = np.where(qq == 0.0, np.inf, c / safe_q)
            r1 = np.where(real & (r1 > 0.0), r1, np.inf)
            r2 = np.where(real & (r2 > 0.0), r2, np.inf)
            alpha = min(alpha, float(np.min(r1)), float(np.min(r2)))
        return alpha


class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^-1 s = lambda``."""

    def __init__(self, cones: _Cones, s, z):
        self.cones = cones
        self.lp = np.sqrt(s[:cones.l] / z[:cones.l])
        self.blocks = []
        for dim, idx in cones.groups:
            sb, zb = s[idx], z[idx]
            sn = np.sqrt(np.maximum(sb[:, 0]**2 - np.einsum("bi,bi->b", sb[:, 1:], sb[:, 1:]), 1e-300))
            zn = np.sqrt(np.maximum(zb[:, 0]**2 - np.einsum("bi,bi->b", zb[:, 1:], zb[:, 1:]), 1e-300))
            sbar = sb / sn[:, None]
            zbar = zb / zn[:, None]
            gam = np.sqrt(np.maximum(0.5 * (1.0 + np.einsum("bi,bi->b", sbar, zbar)), 1e-300))
            w = sbar.copy()
            w[:, 0] += zbar[:, 0]
            w[:, 1:] -= zbar[:, 1:]
            w /= (2.0 * gam)[:, None]
            eta = np.sqrt(sn / zn)
            w0, w1 = w[:, 0], w[:, 1:]
            nb = idx.shape[0]
            core = np.empty((nb, dim, dim))
            core[:, 0, 0] = w0
            core[:, 0, 1:] = w1
            core[:, 1:, 0] = w1
            core[:, 1:, 1:] = np.eye(dim - 1)[None] + np.einsum("bi,bj->bij", w1, w1) / (1.0 + w0)[:, None, None]
            inv = core.copy()
            inv[:, 0, 1:] *= -1.0
            inv[:, 1:, 0] *= -1.0
            self.blocks.append((idx, eta[:, None, None] * core, inv / eta[:, None, None]))

    def apply(self, v, inverse: bool = False) -> np.ndarray:
        """``W v`` (or ``W^-1 v``) for a vector or a matrix with ``m`` rows."""
        out = np.empty_like(v)
        l = self.cones.l
        if v.ndim == 1:
            out[:l] = v[:l] / self.lp if inverse else v[:l] * self.lp
            for idx, Wb, Wib in self.blocks:
                out[idx] = np.einsum("bij,bj->bi", Wib if inverse else Wb, v[idx])
        else:
            out[:l] = v[:l] / self.lp[:, None] if inverse else v[:l] * self.lp[:, None]
            for idx, Wb, Wib in self.blocks:
                out[idx] = np.einsum("bij,bjn->bin", Wib if inverse else Wb, v[idx])
        return out


def _standard_form(problem: ConicProblem, keep: np.ndarray, fixed_vals: np.ndarray):
    """Stack all constraints as ``G x + s = h``, ``s`` in LP x SOC cones, over free variables."""
    fixed = ~keep
    lp_G, lp_h = [], []
    if problem.G.shape[0]:
        lp_G.append(problem.G)
        lp_h.append(problem.h)
    n = problem.dim
    eye = np.eye(n)
    up = np.isfinite(problem.upper) & keep
    lo = np.isfinite(problem.lower) & keep
    if up.any():
        lp_G.append(eye[up])
        lp_h.append(problem.upper[up])
    if lo.any():
        lp_G.append(-eye[lo])
        lp_h.append(-problem.lower[lo])
    soc_G, soc_h, soc_dims = [], [], []
    for con in problem.soc_constraints:
        if con.b.size == 0:
            lp_G.append(-con.c[None, :])
            lp_h.append(np.array([con.e]))
        else:
            soc_G.append(-np.vstack([con.c[None, :], con.A]))
            soc_h.append(np.concatenate([[con.e], con.b]))
            soc_dims.append(1 + con.b.size)
    G_lp = np.vstack(lp_G) if lp_G else np.zeros((0, n))
    h_lp = np.concatenate(lp_h) if lp_h else np.zeros(0)
    G = np.vstack([G_lp] + soc_G) if soc_G else G_lp
    h = np.concatenate([h_lp] + soc_h) if soc_h else h_lp
    if fixed.any():
        h = h - G[:, fixed] @ fixed_vals[fixed]
    # order: LP rows first, then cones grouped as listed
    return G[:, keep], h, _Cones(G_lp.shape[0], soc_dims)


def _factor(M):
    reg = 1e-13 * max(1.0, float(np.max(np.abs(np.diag(M))))) if M.size else 0.0
    try:
        return cho_factor(M + reg * np.eye(M.shape[0]), check_finite=False)
    except LinAlgError:
        return None


def _solve(fac, M, rhs):
    if fac is not None:
        return cho_solve(fac, rhs, check_finite=False)
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


def solve_conic(problem: ConicProblem, warm_start=None, tol: float = 1e-9, max_iter: int = 60) -> SolveResult:
    """Solve a :class:`ConicProblem` to optimality or certify failure.

    ``Optimal`` means relative primal and dual residuals and the relative
    duality gap are all below ``tol`` (or, once progress stalls, primal
    residual and gap below ``ACCEPT_TOL`` and the dual residual below
    ``DUAL_ACCEPT_FACTOR * ACCEPT_TOL``). ``Infeasible`` is returned when
    the iterates expose a Farkas certificate ``G'y ~ 0, h'y = -1, y in K``.
    """
    # diverging iterates may overflow; the best iterate is kept and reported
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _solve_conic(problem, warm_start, tol, max_iter)


def _solve_conic(problem: ConicProblem, warm_start, tol: float, max_iter: int) -> SolveResult:
    n = problem.dim
    fixed = (problem.upper - problem.lower) <= 1e-12
    keep = ~fixed
    fixed_vals = np.where(fixed, problem.lower, 0.0)
    G, h, cones = _standard_form(problem, keep, fixed_vals)
    P = problem.P[np.ix_(keep, keep)]
    q = problem.q[keep] + problem.P[np.ix_(keep, fixed)] @ fixed_vals[fixed]
    nk = int(keep.sum())

    def finish(status, xk, it, kkt, zdual=None):
        z_full = fixed_vals.copy()
        z_full[keep] = xk
        return SolveResult(status, z_full, problem.objective(z_full), it,
                           max(problem.max_violation(z_full), 0.0), kkt, zdual)

    m = cones.m
    if m == 0:
        x = np.linalg.lstsq(P, -q, rcond=None)[0] if nk else np.zeros(0)
        res = np.linalg.norm(P @ x + q) / max(1.0, np.linalg.norm(q))
        return finish(Status.OPTIMAL if res <= 1e-8 else Status.ITERATION_LIMIT, x, 0, res)

    # initial point: least-squares fit of the constraints, then shift into the cones
    K = P + G.T @ G
    fac = _factor(K)
    if warm_start is not None:
        x = np.asarray(warm_start, dtype=float)[keep].copy()
    else:
        x = _solve(fac, K, -q + G.T @ h)
    e = cones.identity()
    s = h - G @ x
    z = -s.copy()
    a_p = -cones.min_eig(s)
    if a_p >= -1e-8 * max(1.0, np.linalg.norm(s)):
        s = s + (1.0 + max(a_p, 0.0)) * e
    a_d = -cones.min_eig(z)
    if a_d >= -1e-8 * max(1.0, np.linalg.norm(z)):
        z = z + (1.0 + max(a_d, 0.0)) * e

    hnorm = max(1.0, np.linalg.norm(h))
    qnorm = max(1.0, np.linalg.norm(q))
    kkt = np.inf
    best = (np.inf, x, z, 0, np.inf)
    for it in range(max_iter):
        rx = P @ x + q + G.T @ z
        rz = G @ x + s - h
        gap = float(s @ z)
        pcost = 0.5 * x @ P @ x + q @ x
        pres = np.linalg.norm(rz) / hnorm
        dres = np.linalg.norm(rx) / qnorm
        relgap = gap / max(1.0, abs(pcost))
        kkt = max(pres, dres, relgap)
        if not np.isfinite(kkt):
            break
        merit = max(pres, relgap, dres / DUAL_ACCEPT_FACTOR)
        if merit < best[0]:
            best = (merit, x.copy(), z.copy(), it, kkt)
        elif best[0] <= 1e-5 and it - best[3] >= STALL_ITERS:
            break  # stalled near the optimum on rounding noise
        if kkt <= tol:
            return finish(Status.OPTIMAL, x, it, kkt, z)
        hz = float(h @ z)
        if hz < 0 and np.linalg.norm(G.T @ z) <= 1e-9 * -hz and pres > tol:
            return finish(Status.INFEASIBLE, x, it, kkt, z)

        W = _Scaling(cones, s, z)
        lam = W.apply(z)
        Gs = W.apply(G, inverse=True)
        M = P + Gs.T @ Gs
        fac = _factor(M)

        def reduced(bx, bz, bs):
            t = cones.inv_prod(lam, bs)
            u = t - W.apply(bz, inverse=True)
            dx = _solve(fac, M, bx - Gs.T @ u)
            dz = W.apply(Gs @ dx + u, inverse=True)
            ds = W.apply(t - W.apply(dz))
            return dx, dz, ds

        def newton(bx, bz, bs):
            dx, dz, ds = reduced(bx, bz, bs)
            # refine against the unreduced system while that keeps reducing its residual;
            # the reduced matrix becomes ill-conditioned as the scaling approaches the optimum
            scale = max(np.linalg.norm(bx), np.linalg.norm(bz), np.linalg.norm(bs), 1e-300)
            err = np.inf
            for _ in range(REFINE_ROUNDS):
                ex = bx - P @ dx - G.T @ dz
                ez = bz - G @ dx - ds
                es = bs - cones.prod(lam, W.apply(dz) + W.apply(ds, inverse=True))
                new_err = max(np.linalg.norm(ex), np.linalg.norm(ez), np.linalg.norm(es))
                if not new_err < 0.5 * err or new_err <= 1e-15 * scale:
                    break
                err = new_err
                cx, cz, cs = reduced(ex, ez, es)
                dx, dz, ds = dx + cx, dz + cz, ds + cs
            return dx, dz, ds

        lamlam = cones.prod(lam, lam)
        dx_a, dz_a, ds_a = newton(-rx, -rz, -lamlam)
        alpha_a = min(1.0, cones.max_step(s, ds_a), cones.max_step(z, dz_a))
        mu = gap / cones.degree
        sigma = float(np.clip(((s + alpha_a * ds_a) @ (z + alpha_a * dz_a)) / gap, 0.0, 1.0)) ** 3
        corr = cones.prod(W.apply(ds_a, inverse=True), W.apply(dz_a))
        dx, dz, ds = newton(-rx, -rz, -lamlam - corr + sigma * mu * e)
        alpha = min(1.0, 0.99 * min(cones.max_step(s, ds), cones.max_step(z, dz)))
        if not np.isfinite(alpha) or alpha < 1e-12:
            break
        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz

    merit, x, z, it, kkt = best
    if merit <= ACCEPT_TOL:
        # stalled on numerical noise close to the optimum
        return finish(Status.OPTIMAL, x, it, kkt, z)
    hz = float(h @ z)
    if np.all(np.isfinite(z)) and hz < 0 and np.linalg.norm(G.T @ z) <= 1e-5 * -hz:
        return finish(Status.INFEASIBLE, x, it, kkt, z)
    return finish(Status.ITERATION_LIMIT, x, it, kkt, z)
