"""Forward-backward splitting learning policy and the trial-to-trial loop.

One policy step solves

    argmin_{v in X}  1/2 ||v - u||_W^2 + alpha v' F(u, y),
    F(u, y) = M' Q (y - r) + R u,

which is the W-weighted projection of u - alpha W^-1 F(u, y) onto the
tightened set X.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .analysis import preconditioner, robust_constants, step_window, w_norm
from .lifted import DisturbanceModel, LiftedSystem, run_trial, sample_disturbance
from .qp import QpFailure, QpSettings, QpSolution, QpSolver
from .uncertainty import TightenedSet, UncertaintySet, as_halfspaces

logger = logging.getLogger(__name__)

CONVERGED = "converged"
K_MAX = "k_max"
ERROR = "error"


class PolicyError(RuntimeError):
    def __init__(self, message, k=None, trace=None):
        super().__init__(message)
        self.k = k
        self.trace = trace


class ConstraintViolation(PolicyError):
    """An iterate left the tightened set; the robust guarantee is broken."""


@dataclass
class PolicyConfig:
    Q: np.ndarray
    R: np.ndarray
    r: np.ndarray
    M: np.ndarray
    X: TightenedSet
    unc: UncertaintySet | None = None
    alpha: float | None = None
    stop_eps: float = 1e-6
    k_max: int = 50
    qp_settings: QpSettings | None = None
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.r = np.asarray(self.r, dtype=float).reshape(-1)
        m, n = self.M.shape
        if self.Q.shape != (m, m) or self.R.shape != (n, n) or self.r.shape != (m,):
            raise ValueError("Q, R, r and M have inconsistent dimensions")
        if self.X.dim != n:
            raise ValueError(f"tightened set lives in R^{self.X.dim}, expected R^{n}")
        self.W = preconditioner(self.M, self.Q, self.R)

        self.alpha_window = None
        if self.unc is not None:
            rc = robust_constants(self.unc, self.Q, self.R, self.M)
            self.alpha_window, default = step_window(rc.mu, rc.L)
            if self.alpha is None:
                self.alpha = default
            elif not self.alpha_window[0] < self.alpha < self.alpha_window[1]:
                msg = (f"alpha = {self.alpha:.6g} overrides the certified window "
                       f"(0, {self.alpha_window[1]:.6g})")
                warnings.warn(msg)
                self.warnings.append(msg)
        if self.alpha is None:
            raise ValueError("alpha is required when no uncertainty set is given")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def n(self) -> int:
        return self.M.shape[1]

    @property
    def m(self) -> int:
        return self.M.shape[0]

    @cached_property
    def solver(self) -> QpSolver:
        return QpSolver(self.W, self.X.A, self.X.b, self.qp_settings)

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        sol = self.solver.solve(-self.W @ x)
        if not sol.optimal:
            raise QpFailure(f"projection ended with status {sol.status}", sol)
        return sol.x


def gradient_surrogate(u, y, cfg: PolicyConfig) -> np.ndarray:
    return cfg.M.T @ (cfg.Q @ (np.asarray(y) - cfg.r)) + cfg.R @ np.asarray(u)


def surrogate_cost(u, y, cfg: PolicyConfig) -> float:
    e = np.asarray(y) - cfg.r
    u = np.asarray(u)
    return 0.5 * float(e @ cfg.Q @ e) + 0.5 * float(u @ cfg.R @ u)


def true_cost(u, plant: LiftedSystem, cfg: PolicyConfig) -> float:
    """phi(u) = 1/2 u'Hu + f'u with the true G, w (simulator side)."""
    u = np.asarray(u)
    Gu = plant.G @ u
    f_term = (plant.w - cfg.r) @ cfg.Q @ Gu
    return 0.5 * float(Gu @ cfg.Q @ Gu) + 0.5 * float(u @ cfg.R @ u) + float(f_term)


def _step(u, y, cfg: PolicyConfig, warm: QpSolution | None = None) -> QpSolution:
    q = -cfg.W @ u + cfg.alpha * gradient_surrogate(u, y, cfg)
    ws = (warm.x, warm.y) if warm is not None else None
    sol = cfg.solver.solve(q, warm_start=ws)
    if not sol.optimal:
        raise QpFailure(f"policy QP ended with status {sol.status}", sol)
    return sol


def policy_step(u, y, cfg: PolicyConfig) -> np.ndarray:
    return _step(np.asarray(u, dtype=float), np.asarray(y, dtype=float), cfg).x


@dataclass
class IterationRecord:
    k: int
    u: np.ndarray
    y: np.ndarray
    d: np.ndarray
    surrogate_cost: float
    true_cost: float
    dist_ubar: float
    dist_ustar: float
    max_slack: float


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)
    status: str | None = None
    message: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records])


def constraint_excess(u, y, X: TightenedSet) -> float:
    """Largest signed excess a'z - b over the input rows of U and the rows of
    Y at the measured output; <= 0 means every constraint holds."""
    worst = -np.inf
    Au, bu = as_halfspaces(X.input_set, X.dim)
    if len(bu):
        worst = max(worst, float((Au @ u - bu).max()))
    if X.Y is not None:
        Ay, by = as_halfspaces(X.Y, len(y))
        if len(by):
            worst = max(worst, float((Ay @ y - by).max()))
    return worst if np.isfinite(worst) else 0.0


def run_ilc(plant: LiftedSystem, disturbance: DisturbanceModel, cfg: PolicyConfig,
            u0=None, u_bar=None, u_star=None, check_tol: float = 1e-8) -> IterationTrace:
    """Trial-to-trial loop: measure, update, repeat.

    Stops when consecutive surrogate costs differ by at most ``cfg.stop_eps``
    (checked before the iteration cap) or after ``cfg.k_max`` updates.
    ``u_bar`` and ``u_star`` are only used for logging distances.
    """
    trace = IterationTrace()
    nan = float("nan")

    def record(k, u):
        d = sample_disturbance(disturbance, k)
        y = run_trial(plant, u, d)
        chk = cfg.X.check(u, tol=check_tol) if cfg.X.unc is not None else None
        if chk is not None and not chk.ok:
            raise ConstraintViolation(f"iterate {k} leaves the tightened set ({chk.kind}, "
                              f"violation {chk.violation:.3e})", k)
        trace.records.append(IterationRecord(
            k, u, y, d,
            surrogate_cost(u, y, cfg),
            true_cost(u, plant, cfg),
            w_norm(u - u_bar, cfg.W) if u_bar is not None else nan,
            w_norm(u - u_star, cfg.W) if u_star is not None else nan,
            constraint_excess(u, y, cfg.X),
        ))
        return y

    try:
        u = cfg.project(np.zeros(cfg.n) if u0 is None else u0)
        y = record(0, u)
        k = 0
        warm = None
        while k < cfg.k_max:
            try:
                warm = _step(u, y, cfg, warm)
            except QpFailure as exc:
                raise PolicyError(f"policy QP failed at iteration {k}: {exc}", k) from exc
            u = warm.x
            k += 1
            y = record(k, u)
            if abs(trace.records[-1].surrogate_cost - trace.records[-2].surrogate_cost) <= cfg.stop_eps:
                trace.status = CONVERGED
                return trace
        trace.status = K_MAX
        return trace
    except Exception as exc:
        trace.status = ERROR
        trace.message = str(exc)
        if isinstance(exc, PolicyError):
            exc.trace = trace
            raise
        raise PolicyError(str(exc), len(trace.records), trace) from exc
