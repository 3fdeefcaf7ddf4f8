"""Random problem families for property checks and experiments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import NotStronglyMonotone
from .lifted import DisturbanceModel, LiftedSystem
from .policy import PolicyConfig
from .uncertainty import Box, TightenedSet, UncertaintySet, blend_model, build_tightened_set


@dataclass
class Instance:
    plant: LiftedSystem
    unc: UncertaintySet
    true_weights: np.ndarray
    U: Box
    Y: Box
    D: Box
    X: TightenedSet
    cfg: PolicyConfig

    def disturbance(self, seed: int = 0, noiseless: bool = False) -> DisturbanceModel:
        if noiseless:
            return DisturbanceModel(Box(np.zeros(self.plant.m), np.zeros(self.plant.m)))
        return DisturbanceModel(self.D, seed=seed)


def random_instance(rng: np.random.Generator, n_max: int = 8, m_max: int = 12,
                    N_max: int = 4, exact_model: bool = False, max_tries: int = 50) -> Instance:
    """Box-constrained instance with vertex uncertainty around a random nominal map.

    The output box is built around the vertex responses at u = 0 so the
    tightened set is never empty; the reference is placed far enough away
    that constraints are usually active at the optimum.
    """
    for _ in range(max_tries):
        n = int(rng.integers(1, n_max + 1))
        m = int(rng.integers(1, m_max + 1))
        N = int(rng.integers(1, N_max + 1))
        G0 = rng.normal(size=(m, n))
        spread = rng.uniform(0.02, 0.3)
        Gs = [G0 * (1 + spread * rng.uniform(-1, 1, size=(m, n))) for _ in range(N)]
        w0 = rng.normal(size=m)
        ws = [w0 + 0.1 * spread * rng.normal(size=m) for _ in range(N)]
        unc = UncertaintySet(Gs, ws, rng.dirichlet(np.ones(N)))
        lam_true = rng.dirichlet(np.ones(N))
        G, w = blend_model(unc, lam_true)
        M = G.copy() if exact_model else blend_model(unc)[0]
        if exact_model:
            unc = UncertaintySet(Gs, ws, lam_true)

        Q = np.diag(rng.uniform(0.5, 2.0, m))
        R = 10 ** rng.uniform(-2, 0) * np.eye(n)
        r = w0 + 3.0 * rng.normal(size=m)

        rd = rng.uniform(0.0, 0.1)
        D = Box(-rd * rng.uniform(0.5, 1, m), rd * rng.uniform(0.5, 1, m))
        U = Box.symmetric(rng.uniform(0.5, 3.0), n)
        W0 = np.array(ws)
        margin = rng.uniform(0.05, 1.0, m)
        Y = Box(W0.min(axis=0) + D.lower - margin, W0.max(axis=0) + D.upper + margin)

        X = build_tightened_set(U, Y, D, unc)
        try:
            cfg = PolicyConfig(Q, R, r, M, X, unc=unc, k_max=50, stop_eps=0.0)
        except NotStronglyMonotone:
            continue
        return Instance(LiftedSystem(G, w), unc, lam_true, U, Y, D, X, cfg)
    raise RuntimeError("could not draw a strongly monotone instance")
