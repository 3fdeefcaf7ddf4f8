"""Constraint sets, vertex uncertainty and robust constraint tightening."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .qp import FeasibilityResult, feasibility_check


class EmptyTightenedSet(ValueError):
    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; infinite bounds mark unconstrained coordinates."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).reshape(-1)
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        bad = np.flatnonzero(lo > hi)
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"lower > upper at coordinate {i} ({lo[i]} > {hi[i]})")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, radius, dim: int | None = None) -> "Box":
        r = np.asarray(radius, dtype=float)
        if dim is not None:
            r = np.broadcast_to(r, (dim,))
        return cls(-r, r)

    @classmethod
    def unbounded(cls, dim: int) -> "Box":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def radius(self) -> float:
        """Smallest r with the box inside the inf-norm ball of radius r."""
        return float(max(np.abs(self.lower).max(initial=0.0), np.abs(self.upper).max(initial=0.0)))

    def vertices(self) -> np.ndarray:
        grids = np.meshgrid(*[[l, u] for l, u in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def support(self, a: np.ndarray) -> np.ndarray:
        """Support function h(a) = max_{d in box} a'd, row-wise for a matrix."""
        a = np.atleast_2d(a)
        return np.maximum(a * self.upper, a * self.lower).sum(axis=1)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.dim
        I = np.eye(n)
        up = np.isfinite(self.upper)
        lo = np.isfinite(self.lower)
        A = np.vstack([I[up], -I[lo]])
        b = np.concatenate([self.upper[up], -self.lower[lo]])
        return A, b


@dataclass(frozen=True)
class Polytope:
    """{x | A x <= b}."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float)).reshape(-1)
        A = np.asarray(self.A, dtype=float).reshape(b.shape[0], -1)
        if np.any(np.linalg.norm(A, axis=1) == 0):
            raise ValueError("polytope has a zero row")
        if not np.all(np.isfinite(b)):
            raise ValueError("polytope offsets must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @cached_property
    def feasibility(self) -> FeasibilityResult:
        return feasibility_check(self.A, self.b, dim=self.dim)

    def is_empty(self) -> bool:
        return not self.feasibility.feasible

    def contains(self, x, tol: float = 1e-9) -> bool:
        return bool(np.all(self.A @ np.asarray(x, dtype=float) <= self.b + tol))

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        return self.A, self.b


@dataclass(frozen=True)
class EmptySet:
    dim: int

    def is_empty(self) -> bool:
        return True

    def contains(self, x, tol: float = 0.0) -> bool:
        return False


ConvexSet = Union[Box, Polytope]


def as_halfspaces(S: ConvexSet | None, dim: int) -> tuple[np.ndarray, np.ndarray]:
    if S is None:
        return np.zeros((0, dim)), np.zeros(0)
    if S.dim != dim:
        raise ValueError(f"set has dimension {S.dim}, expected {dim}")
    return S.halfspaces()


def pontryagin_diff(Y: ConvexSet, D: Box) -> ConvexSet | EmptySet:
    """Y minus D in the Pontryagin sense; only box-shaped D is supported."""
    if not D.is_bounded():
        raise ValueError("D must be compact")
    if np.any(D.lower > 0) or np.any(D.upper < 0):
        raise ValueError("D must contain the origin")
    if Y.dim != D.dim:
        raise ValueError(f"dimension mismatch: Y has {Y.dim}, D has {D.dim}")
    if isinstance(Y, Box):
        lo = Y.lower - D.lower
        hi = Y.upper - D.upper
        if np.any(lo > hi):
            return EmptySet(Y.dim)
        return Box(lo, hi)
    shrunk = Polytope(Y.A, Y.b - D.support(Y.A))
    if shrunk.is_empty():
        return EmptySet(Y.dim)
    return shrunk


@dataclass(frozen=True)
class UncertaintySet:
    """Convex hull of vertex models [G_i, w_i] with nominal blend weights."""

    G: Sequence[np.ndarray]
    w: Sequence[np.ndarray]
    nominal_weights: np.ndarray | None = None

    def __post_init__(self):
        G = [np.atleast_2d(np.asarray(g, dtype=float)) for g in self.G]
        w = [np.asarray(v, dtype=float).reshape(-1) for v in self.w]
        if not G:
            raise ValueError("at least one vertex is required")
        if len(w) != len(G):
            raise ValueError("need one offset per vertex")
        m, n = G[0].shape
        for i, (g, v) in enumerate(zip(G, w)):
            if g.shape != (m, n) or v.shape != (m,):
                raise ValueError(f"vertex {i} has inconsistent dimensions")
        lam = (np.full(len(G), 1.0 / len(G)) if self.nominal_weights is None
               else check_simplex(self.nominal_weights, len(G)))
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "nominal_weights", lam)

    @property
    def N(self) -> int:
        return len(self.G)

    @property
    def shape(self) -> tuple[int, int]:
        return self.G[0].shape

    def sample_weights(self, rng: np.random.Generator) -> np.ndarray:
        return rng.dirichlet(np.ones(self.N))


def check_simplex(lam, N: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (N,):
        raise ValueError(f"expected {N} blend weights, got {lam.shape[0]}")
    if np.any(lam < -1e-12) or abs(lam.sum() - 1.0) > 1e-12:
        raise ValueError("blend weights must lie in the probability simplex")
    return np.maximum(lam, 0.0)


def blend_model(unc: UncertaintySet, lam=None) -> tuple[np.ndarray, np.ndarray]:
    lam = unc.nominal_weights if lam is None else check_simplex(lam, unc.N)
    M = sum(l * g for l, g in zip(lam, unc.G))
    wM = sum(l * v for l, v in zip(lam, unc.w))
    return M, wM


@dataclass(frozen=True)
class TightenedSet:
    """U intersected with {v | G_i v + w_i in Y minus D, every vertex i}.

    ``A`` and ``b`` hold the compiled half-space system; ``row_origin`` maps
    each row to ``(-1, row)`` for input rows or ``(vertex, row)``.
    """

    A: np.ndarray
    b: np.ndarray
    row_origin: np.ndarray
    input_set: ConvexSet | None
    output_set: ConvexSet | None
    Y: ConvexSet | None = field(repr=False, default=None)
    D: Box | None = field(repr=False, default=None)
    unc: UncertaintySet | None = field(repr=False, default=None)
    feasibility: FeasibilityResult | None = field(repr=False, default=None)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def slack(self, v) -> np.ndarray:
        return self.b - self.A @ np.asarray(v, dtype=float)

    def contains(self, v, tol: float = 1e-8) -> bool:
        return bool(np.all(self.slack(v) >= -tol))

    def check(self, u, tol: float = 1e-8) -> "RobustCheck":
        return robust_output_check(self.unc, self.input_set, self.Y, self.D, u, tol)


def build_tightened_set(U: ConvexSet | None, Y: ConvexSet | None, D: Box,
                        unc: UncertaintySet) -> TightenedSet:
    m, n = unc.shape
    Au, bu = as_halfspaces(U, n)
    if Y is None:
        Yt = None
    else:
        Yt = pontryagin_diff(Y, D)
        if isinstance(Yt, EmptySet):
            raise EmptyTightenedSet("Y minus D is empty")
    Ay, by = as_halfspaces(Yt, m)

    rows = [Au]
    rhs = [bu]
    origin = [np.column_stack([np.full(len(bu), -1), np.arange(len(bu))])]
    for i, (G, w) in enumerate(zip(unc.G, unc.w)):
        Ai = Ay @ G
        bi = by - Ay @ w
        nz = np.linalg.norm(Ai, axis=1) > 1e-14 * (1 + np.linalg.norm(Ay, axis=1))
        if np.any(bi[~nz] < 0):
            j = int(np.flatnonzero(~nz & (bi < 0))[0])
            raise EmptyTightenedSet(f"vertex {i} violates output row {j} for every input")
        rows.append(Ai[nz])
        rhs.append(bi[nz])
        origin.append(np.column_stack([np.full(nz.sum(), i), np.flatnonzero(nz)]))
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    feas = feasibility_check(A, b, dim=n)
    if not feas.feasible:
        raise EmptyTightenedSet("tightened set is empty", feas.certificate)
    return TightenedSet(A, b, np.vstack(origin).astype(int), U, Yt, Y, D, unc, feas)


@dataclass
class RobustCheck:
    ok: bool
    kind: str | None = None  # "input" or "output"
    vertex: int | None = None
    row: int | None = None
    violation: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def robust_output_check(unc: UncertaintySet, U: ConvexSet | None, Y: ConvexSet | None,
                        D: Box, u, tol: float = 1e-8) -> RobustCheck:
    u = np.asarray(u, dtype=float).reshape(-1)
    m, n = unc.shape
    if u.shape[0] != n:
        raise ValueError(f"input has length {u.shape[0]}, expected {n}")
    Au, bu = as_halfspaces(U, n)
    if len(bu):
        viol = Au @ u - bu
        j = int(np.argmax(viol))
        if viol[j] > tol:
            return RobustCheck(False, "input", None, j, float(viol[j]))
    if Y is None:
        return RobustCheck(True)
    Yt = pontryagin_diff(Y, D)
    if isinstance(Yt, EmptySet):
        return RobustCheck(False, "output", None, None, np.inf)
    Ay, by = Yt.halfspaces()
    worst = RobustCheck(True)
    for i, (G, w) in enumerate(zip(unc.G, unc.w)):
        viol = Ay @ (G @ u + w) - by
        j = int(np.argmax(viol)) if len(viol) else 0
        if len(viol) and viol[j] > tol and viol[j] > worst.violation:
            worst = RobustCheck(False, "output", i, j, float(viol[j]))
    return worst
