"""Lifted representation y = G u + w + d of a repetitive process.

Trajectories are stacked time-major: ``u = [u(0); ...; u(T-1)]`` and
``y = [y(0); ...; y(T)]``, so ``G`` is block lower triangular with zero
diagonal blocks (no direct feedthrough).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .uncertainty import Box


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class LiftedSystem:
    G: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if G.ndim != 2 or G.shape[0] < 1 or G.shape[1] < 1:
            raise DimensionError(f"G must be a non-empty matrix, got shape {G.shape}")
        if w.shape[0] != G.shape[0]:
            raise DimensionError(f"w has length {w.shape[0]}, expected {G.shape[0]}")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(w))):
            raise ValueError("G and w must be finite")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", w)

    @property
    def m(self) -> int:
        return self.G.shape[0]

    @property
    def n(self) -> int:
        return self.G.shape[1]


@dataclass(frozen=True)
class LtvRealization:
    """x(i+1) = A(i) x(i) + B(i) u(i),  y(i) = C(i) x(i) + c(i).

    ``A`` and ``B`` hold T matrices (steps 0..T-1); ``C`` and ``c`` hold
    T+1 entries (outputs 0..T).
    """

    A: Sequence[np.ndarray]
    B: Sequence[np.ndarray]
    C: Sequence[np.ndarray]
    c: Sequence[np.ndarray]
    x0: np.ndarray

    def __post_init__(self):
        A = [np.atleast_2d(np.asarray(a, dtype=float)) for a in self.A]
        B = [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.B]
        C = [np.atleast_2d(np.asarray(cc, dtype=float)) for cc in self.C]
        c = [np.atleast_1d(np.asarray(cc, dtype=float)).reshape(-1) for cc in self.c]
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float)).reshape(-1)
        T = len(A)
        if T < 1:
            raise DimensionError("horizon T must be at least 1")
        if len(B) != T:
            raise DimensionError(f"expected {T} B matrices, got {len(B)}")
        if len(C) != T + 1 or len(c) != T + 1:
            raise DimensionError(f"expected {T + 1} C matrices and offsets, got {len(C)} and {len(c)}")
        s = x0.shape[0]
        p = B[0].shape[1]
        q = C[0].shape[0]
        for i, a in enumerate(A):
            if a.shape != (s, s):
                raise DimensionError(f"A({i}) has shape {a.shape}, expected {(s, s)}")
        for i, b in enumerate(B):
            if b.shape != (s, p):
                raise DimensionError(f"B({i}) has shape {b.shape}, expected {(s, p)}")
        for i, cm in enumerate(C):
            if cm.shape != (q, s):
                raise DimensionError(f"C({i}) has shape {cm.shape}, expected {(q, s)}")
        for i, ci in enumerate(c):
            if ci.shape != (q,):
                raise DimensionError(f"c({i}) has length {ci.shape[0]}, expected {q}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "x0", x0)

    @property
    def horizon(self) -> int:
        return len(self.A)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(states, inputs, outputs)."""
        return self.x0.shape[0], self.B[0].shape[1], self.C[0].shape[0]


def build_lifted(ltv: LtvRealization) -> LiftedSystem:
    T = ltv.horizon
    s, p, q = ltv.dims
    G = np.zeros((q * (T + 1), p * T))
    w = np.zeros(q * (T + 1))

    # Phi_j = transition from step j to the current step i, kept for all j <= i
    Phi = [np.eye(s)]
    state_free = ltv.x0.copy()
    for i in range(T + 1):
        rows = slice(i * q, (i + 1) * q)
        w[rows] = ltv.C[i] @ state_free + ltv.c[i]
        for j in range(i):
            # Phi[j + 1] maps x(j+1) to x(i)
            G[rows, j * p:(j + 1) * p] = ltv.C[i] @ Phi[j + 1] @ ltv.B[j]
        if i == T:
            break
        Ai = ltv.A[i]
        Phi = [Ai @ P for P in Phi] + [np.eye(s)]
        state_free = Ai @ state_free
    return LiftedSystem(G, w)


def simulate_ltv(ltv: LtvRealization, u: np.ndarray) -> np.ndarray:
    """Step-by-step recursion; returns the stacked output trajectory."""
    T = ltv.horizon
    s, p, q = ltv.dims
    u = np.asarray(u, dtype=float).reshape(T, p)
    x = ltv.x0.copy()
    out = []
    for i in range(T + 1):
        out.append(ltv.C[i] @ x + ltv.c[i])
        if i < T:
            x = ltv.A[i] @ x + ltv.B[i] @ u[i]
    return np.concatenate(out)


def run_trial(sys: LiftedSystem, u, d) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)
    if u.shape[0] != sys.n:
        raise DimensionError(f"input has length {u.shape[0]}, expected {sys.n}")
    if d.shape[0] != sys.m:
        raise DimensionError(f"disturbance has length {d.shape[0]}, expected {sys.m}")
    return sys.G @ u + sys.w + d


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded output disturbance: uniform over a box, or an explicit list.

    Samples are a pure function of ``(seed, k)`` so runs are reproducible
    regardless of call order.
    """

    D: Box
    seed: int = 0
    sequence: Sequence[np.ndarray] | None = field(default=None)

    def __post_init__(self):
        if not self.D.is_bounded():
            raise ValueError("disturbance box must be compact")
        if np.any(self.D.lower > 0) or np.any(self.D.upper < 0):
            raise ValueError("disturbance box must contain the origin")
        if self.sequence is not None:
            seq = [np.asarray(s, dtype=float).reshape(-1) for s in self.sequence]
            for k, s in enumerate(seq):
                if not self.D.contains(s, tol=0.0):
                    raise ValueError(f"sequence entry {k} lies outside D")
            object.__setattr__(self, "sequence", seq)

    @property
    def radius(self) -> float:
        return self.D.radius()


def sample_disturbance(model: DisturbanceModel, k: int) -> np.ndarray:
    if model.sequence is not None:
        return model.sequence[k].copy()
    lo, hi = model.D.lower, model.D.upper
    if np.all(lo == hi):
        return lo.copy()
    rng = np.random.default_rng([model.seed, k])
    d = lo + (hi - lo) * rng.random(lo.shape[0])
    # guard against rounding past the upper bound
    return np.clip(d, lo, hi)


def zero_disturbance(m: int) -> DisturbanceModel:
    return DisturbanceModel(Box(np.zeros(m), np.zeros(m)))


# ---------------------------------------------------------------------------
# Built-in demo plant: PD-stabilised double integrator tracking an S-curve.

DEMO_DT = 0.05
DEMO_HORIZON = 50
DEMO_KP = 40.0
DEMO_KD = 9.0
# vertex grid (actuator gain x viscous damping) and the simulated truth
DEMO_GAINS = (0.7, 1.3)
DEMO_DAMPING = (0.0, 1.0)
DEMO_TRUE_WEIGHTS = (0.3, 0.2, 0.3, 0.2)
DEMO_OUTPUTS = 3  # tracking error, velocity, feedback effort


def s_curve(T: int = DEMO_HORIZON, dt: float = DEMO_DT, rise: float = 1.5) -> np.ndarray:
    """Quintic smoothstep from 0 to 1 over ``rise`` seconds, then hold."""
    t = np.arange(T + 1) * dt
    s = np.clip(t / rise, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s**2)


def demo_ltv(gain: float = 1.0, damping: float = 0.0, T: int = DEMO_HORIZON,
             dt: float = DEMO_DT) -> tuple[LtvRealization, np.ndarray]:
    """Closed-loop double integrator with actuator ``gain`` and viscous ``damping``.

    Returns the realization with inputs ``[u(i), pref(i)]`` interleaved and the
    reference trajectory. Outputs per step are tracking error, velocity and
    feedback controller effort.
    """
    ref = s_curve(T, dt)
    Ad = np.array([[1.0, dt], [0.0, 1.0 - damping * dt]])
    Bd = np.array([[0.5 * dt**2], [dt]]) * gain
    K = np.array([[DEMO_KP, DEMO_KD]])
    Acl = Ad - Bd @ K
    # plant input = feedforward u + Kp*pref (the rest of the PD law is in Acl)
    Bcl = np.hstack([Bd, Bd * DEMO_KP])
    C = np.array([[-1.0, 0.0], [0.0, 1.0], [-DEMO_KP, -DEMO_KD]])
    offsets = [np.array([ref[i], 0.0, DEMO_KP * ref[i]]) for i in range(T + 1)]
    ltv = LtvRealization(
        A=[Acl] * T, B=[Bcl] * T, C=[C] * (T + 1), c=offsets, x0=np.zeros(2)
    )
    return ltv, ref


def demo_lifted(gain: float = 1.0, damping: float = 0.0) -> LiftedSystem:
    ltv, ref = demo_ltv(gain, damping)
    full = build_lifted(ltv)
    G = full.G[:, 0::2]
    w = full.w + full.G[:, 1::2] @ ref[:-1]
    return LiftedSystem(G, w)


def demo_vertices() -> list[LiftedSystem]:
    return [demo_lifted(g, c) for g in DEMO_GAINS for c in DEMO_DAMPING]
