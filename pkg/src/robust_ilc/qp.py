"""Dense strictly convex QP over half-spaces.

    minimize    1/2 v'Pv + q'v
    subject to  A v <= b

Solved with ADMM (OSQP-style splitting with over-relaxation and adaptive
penalty) on a row-normalised, cost-scaled copy of the problem. The ADMM
iterate is used to guess the active set, which is then polished by an exact
equality-constrained solve. Nothing is returned as optimal unless it passes
the KKT check in the original scaling.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


class NonConvexError(ValueError):
    pass


class QpFailure(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


@dataclass
class QpSettings:
    tol: float = 1e-8
    max_iter: int = 20_000
    rho: float = 0.1
    sigma: float = 1e-6
    relax: float = 1.6
    check_every: int = 25
    adaptive_rho: bool = True


@dataclass(frozen=True)
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = P.shape[0]
        q = np.asarray(self.q, dtype=float).reshape(-1)
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if P.shape != (n, n) or q.shape != (n,):
            raise ValueError("P must be square and match q")
        if A.shape[0] != b.shape[0]:
            raise ValueError("A and b disagree on the number of rows")
        check_spd(P)
        for name, val in (("P", P), ("q", q), ("A", A), ("b", b)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.P.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    certificate: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def check_spd(P: np.ndarray, name: str = "P") -> None:
    scale = max(np.abs(P).max(), 1.0)
    if np.abs(P - P.T).max() > 1e-10 * scale:
        raise NonConvexError(f"{name} is not symmetric")
    lam_min = np.linalg.eigvalsh(0.5 * (P + P.T))[0]
    if lam_min <= 0:
        raise NonConvexError(f"{name} is not positive definite (min eigenvalue {lam_min:.3e})")


def kkt_residuals(P, q, A, b, x, y) -> dict:
    stat = P @ x + q + A.T @ y
    viol = A @ x - b if A.shape[0] else np.zeros(0)
    return {
        "stationarity": float(np.linalg.norm(stat, np.inf)) if stat.size else 0.0,
        "primal": float(np.maximum(viol, 0.0).max(initial=0.0)),
        "complementarity": float(abs(y @ viol)) if viol.size else 0.0,
        "dual": float(np.maximum(-y, 0.0).max(initial=0.0)),
    }


def kkt_ok(res: dict, q: np.ndarray, tol: float) -> bool:
    scaled = tol * (1.0 + np.linalg.norm(q, np.inf))
    return (res["stationarity"] <= scaled and res["primal"] <= scaled
            and res["complementarity"] <= scaled and res["dual"] <= 1e-10 * (1.0 + np.linalg.norm(q, np.inf)))


class QpSolver:
    """Reusable solver for a fixed (P, A, b); only the linear term changes.

    Factorisations of P and of the ADMM system are cached on the instance.
    """

    def __init__(self, P, A, b, settings: QpSettings | None = None):
        self.settings = settings or QpSettings()
        P = np.atleast_2d(np.asarray(P, dtype=float))
        check_spd(P)
        self.P = 0.5 * (P + P.T)
        self.n = self.P.shape[0]
        self.A = np.asarray(A, dtype=float).reshape(-1, self.n)
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.h = self.A.shape[0]
        if self.b.shape[0] != self.h:
            raise ValueError("A and b disagree on the number of rows")
        self._P_chol = sla.cho_factor(self.P)

        norms = np.linalg.norm(self.A, axis=1) if self.h else np.zeros(0)
        if np.any(norms == 0):
            raise ValueError("constraint matrix has zero rows")
        self._row_scale = 1.0 / norms
        self._As = self.A * self._row_scale[:, None]
        self._bs = self.b * self._row_scale
        self._cost_scale = self.n / np.trace(self.P)
        self._Ps = self.P * self._cost_scale
        self._rho = self.settings.rho
        self._kkt_factor = None

    # -- ADMM helpers -----------------------------------------------------
    def _factor(self):
        M = self._Ps + self.settings.sigma * np.eye(self.n) + self._rho * self._As.T @ self._As
        self._kkt_factor = sla.cho_factor(M)

    def _to_scaled_dual(self, y):
        return y / (self._row_scale * self._cost_scale)

    def _from_scaled_dual(self, ys):
        return ys * self._row_scale * self._cost_scale

    # -- polishing ----------------------------------------------------------
    def _equality_solve(self, q, active):
        """Minimise over {A_S x = b_S}; returns (x, multipliers on S)."""
        Pinv_q = sla.cho_solve(self._P_chol, q)
        if not len(active):
            return -Pinv_q, np.zeros(0)
        AS = self.A[active]
        Pinv_AT = sla.cho_solve(self._P_chol, AS.T)
        S = AS @ Pinv_AT
        rhs = -AS @ Pinv_q - self.b[active]
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                lam = sla.solve(S, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, sla.LinAlgError, sla.LinAlgWarning):
            # dependent active rows: minimum-norm multipliers
            lam = np.linalg.lstsq(S, rhs, rcond=None)[0]
        x = -Pinv_q - Pinv_AT @ lam
        return x, lam

    def _polish(self, q, active, max_steps=None):
        """Primal-dual active-set refinement from an initial guess."""
        active = sorted(set(int(i) for i in active))
        max_steps = max_steps if max_steps is not None else 2 * self.h + 5
        seen = set()
        bscale = 1e-12 * (1.0 + np.abs(self.b))
        for _ in range(max_steps):
            key = tuple(active)
            if key in seen:
                break
            seen.add(key)
            x, lam = self._equality_solve(q, active)
            if len(active) and lam.min() < -1e-12 * (1 + np.abs(lam).max()):
                active.pop(int(np.argmin(lam)))
                continue
            viol = (self.A @ x - self.b) if self.h else np.zeros(0)
            excess = viol - bscale
            if self.h and excess.max() > 0:
                active = sorted(set(active) | {int(np.argmax(excess))})
                continue
            y = np.zeros(self.h)
            y[active] = np.maximum(lam, 0.0)
            return x, y
        return None

    def _try_polish(self, q, active):
        out = self._polish(q, active)
        if out is None:
            return None
        x, y = out
        res = kkt_residuals(self.P, q, self.A, self.b, x, y)
        if kkt_ok(res, q, self.settings.tol):
            return x, y, res
        return None

    # -- main entry -----------------------------------------------------------
    def solve(self, q, warm_start=None) -> QpSolution:
        q = np.asarray(q, dtype=float).reshape(-1)
        st = self.settings
        if self.h == 0:
            x = -sla.cho_solve(self._P_chol, q)
            y = np.zeros(0)
            return QpSolution(x, y, OPTIMAL, 0, kkt_residuals(self.P, q, self.A, self.b, x, y))

        if warm_start is not None:
            wx, wy = warm_start
            wx = np.asarray(wx, dtype=float) if wx is not None else None
            wy = np.asarray(wy, dtype=float) if wy is not None else None
            guess = []
            if wy is not None:
                guess = list(np.flatnonzero(wy > 0))
            elif wx is not None:
                guess = list(np.flatnonzero(self.A @ wx >= self.b - 1e-9 * (1 + np.abs(self.b))))
            hit = self._try_polish(q, guess)
            if hit is not None:
                return QpSolution(hit[0], hit[1], OPTIMAL, 0, hit[2])
        else:
            wx = wy = None

        qs = q * self._cost_scale
        As, bs = self._As, self._bs
        x = wx.copy() if wx is not None else np.zeros(self.n)
        z = np.minimum(As @ x, bs)
        y = self._to_scaled_dual(wy) if wy is not None else np.zeros(self.h)
        if self._kkt_factor is None:
            self._factor()
        sigma, a = st.sigma, st.relax
        y_prev = y.copy()
        for it in range(1, st.max_iter + 1):
            rhs = sigma * x - qs + As.T @ (self._rho * z - y)
            xt = sla.cho_solve(self._kkt_factor, rhs)
            zt = As @ xt
            x = a * xt + (1 - a) * x
            zr = a * zt + (1 - a) * z
            z_new = np.minimum(zr + y / self._rho, bs)
            y = y + self._rho * (zr - z_new)
            z = z_new

            if it % st.check_every:
                continue
            guess = np.flatnonzero(y > np.maximum(bs - As @ x, 0.0))
            hit = self._try_polish(q, guess)
            if hit is not None:
                return QpSolution(hit[0], hit[1], OPTIMAL, it, hit[2])

            dy = np.maximum(y - y_prev, 0.0)
            y_prev = y.copy()
            ndy = np.linalg.norm(dy, np.inf)
            if ndy > 1e-12 and np.linalg.norm(As.T @ dy, np.inf) <= 1e-9 * ndy and bs @ dy < -1e-9 * ndy:
                cert = dy * self._row_scale
                return QpSolution(x, self._from_scaled_dual(y), INFEASIBLE, it,
                                  certificate=cert / cert.max())

            if st.adaptive_rho:
                r_prim = np.linalg.norm(As @ x - z, np.inf)
                r_dual = np.linalg.norm(self._Ps @ x + qs + As.T @ y, np.inf)
                p_scale = max(np.linalg.norm(As @ x, np.inf), np.linalg.norm(z, np.inf), 1e-12)
                d_scale = max(np.linalg.norm(self._Ps @ x, np.inf), np.linalg.norm(As.T @ y, np.inf),
                              np.linalg.norm(qs, np.inf), 1e-12)
                ratio = np.sqrt((r_prim / p_scale) / max(r_dual / d_scale, 1e-30))
                new_rho = float(np.clip(self._rho * ratio, 1e-6, 1e6))
                if new_rho > 5 * self._rho or new_rho < self._rho / 5:
                    self._rho = new_rho
                    self._factor()

        xo = x
        yo = np.maximum(self._from_scaled_dual(y), 0.0)
        feas = feasibility_check(self.A, self.b)
        if not feas.feasible:
            return QpSolution(xo, yo, INFEASIBLE, st.max_iter, certificate=feas.certificate)
        return QpSolution(xo, yo, MAX_ITER, st.max_iter,
                          kkt_residuals(self.P, q, self.A, self.b, xo, yo))


def solve(qp: QuadraticProgram, warm_start=None, settings: QpSettings | None = None) -> QpSolution:
    return QpSolver(qp.P, qp.A, qp.b, settings).solve(qp.q, warm_start)


def weighted_projection(x, W, region, warm_start=None, settings=None) -> np.ndarray:
    """argmin over ``region`` of ||v - x||_W^2.

    ``region`` either exposes ``A`` and ``b`` (a compiled tightened set or a
    polytope) or a ``halfspaces()`` method (a box).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    W = np.asarray(W, dtype=float)
    A, b = (region.A, region.b) if hasattr(region, "A") else region.halfspaces()
    sol = QpSolver(W, A, b, settings).solve(-W @ x, warm_start)
    if not sol.optimal:
        raise QpFailure(f"projection failed with status {sol.status}", sol)
    return sol.x


@dataclass
class FeasibilityResult:
    feasible: bool
    point: np.ndarray | None = None
    certificate: np.ndarray | None = None
    margin: float = 0.0


def feasibility_check(A, b, tol: float = 1e-8, dim: int | None = None) -> FeasibilityResult:
    """Phase-1 LP: minimise t subject to A x - t <= b.

    The optimal t is the smallest uniform relaxation that makes the system
    feasible. For infeasible systems the LP multipliers give lambda >= 0 with
    A' lambda = 0 and b' lambda < 0.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2:
        A = A.reshape(b.shape[0], -1)
    n = A.shape[1] if A.size or dim is None else dim
    if b.shape[0] == 0:
        return FeasibilityResult(True, np.zeros(n if dim is None else dim))
    h = A.shape[0]
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([A, -np.ones((h, 1))])
    bounds = [(None, None)] * n + [(-1.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"feasibility LP failed: {res.message}")
    t = res.x[-1]
    x = res.x[:n]
    if t <= tol:
        return FeasibilityResult(True, x, margin=-t)
    lam = -np.asarray(res.ineqlin.marginals)
    lam = np.maximum(lam, 0.0)
    lam = lam / lam.max()
    return FeasibilityResult(False, None, lam, margin=-t)
