"""Certificates for the FBS learning policy: monotonicity/Lipschitz constants,
step-size window, contraction rate, ISS gain, fixed-point offset and the
cost-bound coefficients, together with the oracle points u* and u_bar.

Quantities carrying the ``_tilde`` suffix (and everything derived from them)
need the true process and are only meaningful inside a simulator.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .qp import QpFailure, QpSolver, check_spd
from .uncertainty import TightenedSet, UncertaintySet


class NotStronglyMonotone(ValueError):
    def __init__(self, message, mu=None, L=None, per_vertex=None):
        super().__init__(message)
        self.mu = mu
        self.L = L
        self.per_vertex = per_vertex


class StepOutOfRange(ValueError):
    pass


class FixedPointDiverged(RuntimeError):
    pass


# -- linear algebra helpers -------------------------------------------------

def w_norm(x, W) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(max(x @ W @ x, 0.0)))


def sym_sqrt(W, inverse: bool = False) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (W + W.T))
    p = -0.5 if inverse else 0.5
    return (vecs * vals**p) @ vecs.T


def whitened_eigs(S, W_chol) -> np.ndarray:
    """Eigenvalues of L^-1 S L^-T for W = L L' (S symmetric), ascending."""
    X = sla.solve_triangular(W_chol, S, lower=True)
    X = sla.solve_triangular(W_chol, X.T, lower=True)
    return np.linalg.eigvalsh(0.5 * (X + X.T))


def preconditioner(M, Q, R) -> np.ndarray:
    W = M.T @ Q @ M + R
    W = 0.5 * (W + W.T)
    check_spd(W, "W")
    return W


def monotonicity_bounds(H, W) -> tuple[float, float]:
    """(smallest, largest) eigenvalue of the W-whitened symmetric part of H."""
    Lw = np.linalg.cholesky(W)
    ev = whitened_eigs(0.5 * (H + H.T), Lw)
    return float(ev[0]), float(ev[-1])


def w_induced_norm(A, W) -> float:
    """||A||_W = ||W^(1/2) A W^(-1/2)||_2."""
    return float(np.linalg.norm(sym_sqrt(W) @ A @ sym_sqrt(W, inverse=True), 2))


# -- constants ------------------------------------------------------------------

@dataclass
class RobustConstants:
    mu: float
    L: float
    per_vertex: list


def robust_constants(unc: UncertaintySet, Q, R, M) -> RobustConstants:
    W = preconditioner(M, Q, R)
    Lw = np.linalg.cholesky(W)
    per_vertex = []
    for Gi in unc.G:
        Hi = M.T @ Q @ Gi + R
        ev = whitened_eigs(0.5 * (Hi + Hi.T), Lw)
        per_vertex.append((float(ev[0]), float(ev[-1])))
    mu = min(p[0] for p in per_vertex)
    L = max(p[1] for p in per_vertex)
    if mu <= 0:
        raise NotStronglyMonotone(f"robust monotonicity constant mu = {mu:.3e} is not positive",
                                  mu, L, per_vertex)
    return RobustConstants(mu, L, per_vertex)


def true_constants(G, Q, R, M) -> tuple[float, float]:
    """(mu_tilde, L_tilde) for the true map; simulator-side only."""
    W = preconditioner(M, Q, R)
    return monotonicity_bounds(M.T @ Q @ G + R, W)


def step_window(mu: float, L: float) -> tuple[tuple[float, float], float]:
    if mu <= 0:
        raise NotStronglyMonotone(f"mu = {mu:.3e} is not positive", mu, L)
    return (0.0, 2.0 * mu / L**2), mu / L**2


def contraction_certificate(mu_t: float, L_t: float, alpha: float) -> tuple[float, float]:
    """Returns (rate_eps, eta) for step ``alpha``."""
    eps = 1.0 - alpha * L_t**2 / mu_t
    if not -1.0 < eps < 1.0:
        raise StepOutOfRange(f"alpha = {alpha:.6g} gives eps = {eps:.6g} outside (-1, 1)")
    eta2 = 1.0 - (mu_t / L_t) ** 2 * (1.0 - eps**2)
    eta2_direct = 1.0 - 2.0 * alpha * mu_t + alpha**2 * L_t**2
    if abs(eta2 - eta2_direct) > 1e-12 * max(1.0, abs(eta2)):
        raise ArithmeticError(f"rate forms disagree: {eta2!r} vs {eta2_direct!r}")
    return eps, float(np.sqrt(max(eta2, 0.0)))


def iss_gain(W, M, Q, eta: float) -> float:
    return float(np.linalg.norm(sym_sqrt(W) @ M.T @ Q, 2)) / (1.0 - eta)


def offset_bound(H_tilde, W, G, M, Q, u_star, w, r, mu_t: float | None = None) -> tuple[float, float]:
    """Bound on ||u_bar - u*||_W.

    Returns ``(delta, delta_alt)``: the operator-norm constant
    ``||H_tilde||_W * ||e||_W`` and the strong-monotonicity constant
    ``||W^(-1/2) e|| / mu_tilde`` with ``e = (G - M)' Q (G u* + w - r)``.
    """
    e = (G - M).T @ Q @ (G @ u_star + w - r)
    delta = w_induced_norm(H_tilde, W) * w_norm(e, W)
    if mu_t is None:
        mu_t, _ = monotonicity_bounds(H_tilde, W)
    delta_alt = float(np.linalg.norm(sym_sqrt(W, inverse=True) @ e)) / mu_t
    return float(delta), delta_alt


def cost_bound_coeffs(H, W, u_star, f) -> tuple[float, float]:
    Wih = sym_sqrt(W, inverse=True)
    beta1 = float(np.linalg.norm(Wih @ (H @ u_star + f)))
    Lbar = float(np.linalg.eigvalsh(Wih @ (0.5 * (H + H.T)) @ Wih)[-1])
    return beta1, 0.5 * Lbar


# -- oracle points --------------------------------------------------------------

def _optimum(H, f, X: TightenedSet):
    H = np.asarray(H, dtype=float)
    sol = QpSolver(0.5 * (H + H.T), X.A, X.b).solve(np.asarray(f, dtype=float))
    if not sol.optimal:
        raise QpFailure(f"optimum QP ended with status {sol.status}", sol)
    return sol


def solve_optimum(H, f, X: TightenedSet) -> np.ndarray:
    return _optimum(H, f, X).x


def vi_residual(u, cfg, G, w) -> float:
    """||u - T(u, G u + w)||_W for the noiseless policy."""
    from .policy import policy_step
    return w_norm(u - policy_step(u, G @ u + w, cfg), cfg.W)


def _polish_fixed_point(cfg, G, w, active):
    """Solve the affine VI on a fixed active face; None if it is not valid."""
    Ht = cfg.M.T @ cfg.Q @ G + cfg.R
    ft = cfg.M.T @ cfg.Q @ (w - cfg.r)
    A, b = cfg.X.A[active], cfg.X.b[active]
    n, k = Ht.shape[0], len(active)
    K = np.block([[Ht, A.T], [A, np.zeros((k, k))]])
    rhs = np.concatenate([-ft, b])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    u, lam = sol[:n], sol[n:]
    if k and lam.min() < -1e-10 * (1 + np.abs(lam).max()):
        return None
    if not cfg.X.contains(u, tol=1e-12 * (1 + np.abs(cfg.X.b).max(initial=0.0))):
        return None
    return u


def solve_fixed_point(cfg, G, w, tol: float = 1e-10, max_iter: int = 1_000_000,
                      u_init=None) -> tuple[np.ndarray, float]:
    """Noiseless policy iteration to the fixed point u_bar.

    Returns ``(u_bar, vi_residual)``. After the iteration settles, the
    active face is solved exactly and kept if its residual is smaller.
    """
    from .policy import _step

    u = cfg.project(np.zeros(cfg.n) if u_init is None else u_init)
    sol = None
    for _ in range(max_iter):
        sol = _step(u, G @ u + w, cfg, warm=sol)
        step = w_norm(sol.x - u, cfg.W)
        u = sol.x
        if step <= tol:
            break
    else:
        raise FixedPointDiverged(f"no fixed point within {max_iter} iterations")

    res = vi_residual(u, cfg, G, w)
    active = list(np.flatnonzero(sol.y > 0)) if sol is not None and sol.y.size else []
    polished = _polish_fixed_point(cfg, G, w, active)
    if polished is not None:
        res_p = vi_residual(polished, cfg, G, w)
        if res_p <= res:
            u, res = polished, res_p
    return u, res


# -- report ---------------------------------------------------------------------

@dataclass
class OraclePoints:
    u_star: np.ndarray
    u_bar: np.ndarray
    kkt_residual: float
    vi_residual: float


@dataclass
class CertificateReport:
    mu: float
    L: float
    alpha: float
    alpha_window: tuple
    alpha_robust_default: float
    per_vertex: list
    # simulator-side quantities
    mu_tilde: float | None = None
    L_tilde: float | None = None
    rate_eps: float | None = None
    eta: float | None = None
    alpha_star: float | None = None
    eta_star: float | None = None
    eta_operator: float | None = None
    gamma: float | None = None
    gamma_step_scaled: float | None = None
    delta: float | None = None
    delta_alt: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    ubar_ustar_distance: float | None = None
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_window"] = list(self.alpha_window)
        d["per_vertex"] = [{"mu": a, "L": b} for a, b in self.per_vertex]
        return d

    def envelope(self, k: int, dist0: float, d_sup: float, corrected: bool = False) -> float:
        """ISS bound on ||u_k - u_bar||_W.

        ``corrected`` swaps the stated gain for ``gamma_step_scaled``, which
        keeps the alpha W^-1 factor on the disturbance term.
        """
        gamma = self.gamma_step_scaled if corrected else self.gamma
        return self.eta**k * dist0 + gamma * d_sup

    def cost_envelope(self, k: int, dist0: float, d_sup: float, corrected: bool = False) -> float:
        """Bound (beta1 + beta2 s) s on phi(u_k) - phi(u*), s bounding ||u_k - u*||_W.

        The stated form uses ``gamma`` and ``delta``; the corrected form uses
        ``gamma_step_scaled`` and ``delta_alt``.
        """
        offset = self.delta_alt if corrected else self.delta
        s = self.envelope(k, dist0, d_sup, corrected) + offset
        return (self.beta1 + self.beta2 * s) * s


def certify(cfg, unc: UncertaintySet, G=None, w=None) -> tuple[CertificateReport, OraclePoints | None]:
    """Robust constants from the vertex set; with ``G, w`` also the true-model
    certificates and oracle points."""
    rc = robust_constants(unc, cfg.Q, cfg.R, cfg.M)
    window, alpha_default = step_window(rc.mu, rc.L)
    rep = CertificateReport(rc.mu, rc.L, cfg.alpha, window, alpha_default, rc.per_vertex,
                            warnings=list(cfg.warnings))
    if G is None:
        return rep, None

    Q, R, M, W, r = cfg.Q, cfg.R, cfg.M, cfg.W, cfg.r
    Ht = M.T @ Q @ G + R
    H = G.T @ Q @ G + R
    f = G.T @ Q @ (w - r)
    mu_t, L_t = monotonicity_bounds(Ht, W)
    rep.mu_tilde, rep.L_tilde = mu_t, L_t
    rep.rate_eps, rep.eta = contraction_certificate(mu_t, L_t, cfg.alpha)
    rep.alpha_star = mu_t / L_t**2
    rep.eta_star = contraction_certificate(mu_t, L_t, rep.alpha_star)[1]
    Wih = sym_sqrt(W, inverse=True)
    rep.eta_operator = float(np.linalg.norm(np.eye(cfg.n) - cfg.alpha * Wih @ Ht @ Wih, 2))
    if rep.eta_operator > rep.eta * (1 + 1e-9) + 1e-12:
        rep.warnings.append(f"||I - alpha W^-1/2 H~ W^-1/2|| = {rep.eta_operator:.6g} exceeds eta = {rep.eta:.6g}")
    rep.gamma = iss_gain(W, M, Q, rep.eta)
    rep.gamma_step_scaled = cfg.alpha * float(np.linalg.norm(Wih @ M.T @ Q, 2)) / (1 - rep.eta)

    opt = _optimum(H, f, cfg.X)
    u_star = opt.x
    u_bar, res = solve_fixed_point(cfg, G, w, u_init=u_star)
    rep.delta, rep.delta_alt = offset_bound(Ht, W, G, M, Q, u_star, w, r, mu_t)
    rep.beta1, rep.beta2 = cost_bound_coeffs(H, W, u_star, f)
    rep.ubar_ustar_distance = w_norm(u_bar - u_star, W)
    if rep.ubar_ustar_distance > rep.delta + 1e-9:
        rep.warnings.append(f"||u_bar - u*||_W = {rep.ubar_ustar_distance:.6g} exceeds the stated "
                            f"offset bound delta = {rep.delta:.6g}")
    return rep, OraclePoints(u_star, u_bar, max(opt.residuals.values()), res)
