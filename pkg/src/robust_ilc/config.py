"""JSON experiment configuration: strict schema, shorthand expansion and
dimension checks, all reported with the path of the offending field.

Vectors may be given as a number (broadcast), a list, or ``{"repeat": [...]}``
(tiled to the required length). In box bounds ``null`` means unbounded.
Matrices may be a number (scalar times identity), ``{"diag": vec}``,
``{"dense": [[...]]}`` or ``{"kron": {"block": mat, "identity": k}}``, the
last meaning ``I_k kron block`` with ``k`` inferred when omitted.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .lifted import (DEMO_TRUE_WEIGHTS, DimensionError, LiftedSystem, LtvRealization,
                     build_lifted, demo_lifted, demo_vertices)
from .uncertainty import Box, Polytope, UncertaintySet, check_simplex

SWEEP_PARAMETERS = ("model_blend", "disturbance_radius", "alpha", "seed")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


_num = {"type": "number"}
_num_or_null = {"type": ["number", "null"]}
_VEC = {"oneOf": [
    _num,
    {"type": "array", "items": _num_or_null, "minItems": 1},
    {"type": "object", "properties": {"repeat": {"type": "array", "items": _num_or_null, "minItems": 1}},
     "required": ["repeat"], "additionalProperties": False},
]}
_DENSE = {"type": "array", "items": {"type": "array", "items": _num, "minItems": 1}, "minItems": 1}
_MAT = {"oneOf": [
    _num,
    {"type": "object", "properties": {"diag": {"$ref": "#/$defs/vec"}},
     "required": ["diag"], "additionalProperties": False},
    {"type": "object", "properties": {"dense": _DENSE}, "required": ["dense"], "additionalProperties": False},
    {"type": "object", "properties": {"kron": {
        "type": "object",
        "properties": {"block": {"$ref": "#/$defs/mat"}, "identity": {"type": "integer", "minimum": 1}},
        "required": ["block"], "additionalProperties": False}},
     "required": ["kron"], "additionalProperties": False},
]}
_BOX = {"type": "object", "properties": {"box": {
    "type": "object", "properties": {"lower": {"$ref": "#/$defs/vec"}, "upper": {"$ref": "#/$defs/vec"}},
    "required": ["lower", "upper"], "additionalProperties": False}},
    "required": ["box"], "additionalProperties": False}
_SET = {"oneOf": [
    {"type": "null"},
    {"$ref": "#/$defs/box"},
    {"type": "object", "properties": {"halfspaces": {
        "type": "object", "properties": {"A": _DENSE, "b": {"type": "array", "items": _num, "minItems": 1}},
        "required": ["A", "b"], "additionalProperties": False}},
     "required": ["halfspaces"], "additionalProperties": False},
]}
_SEQ_OR_MAT = {"oneOf": [
    _DENSE,
    {"type": "object", "properties": {"sequence": {"type": "array", "items": _DENSE, "minItems": 1}},
     "required": ["sequence"], "additionalProperties": False},
]}
_SEQ_OR_VEC = {"oneOf": [
    {"type": "array", "items": _num, "minItems": 1},
    {"type": "object", "properties": {"sequence": {"type": "array", "minItems": 1,
                                                   "items": {"type": "array", "items": _num, "minItems": 1}}},
     "required": ["sequence"], "additionalProperties": False},
]}
_WEIGHTS = {"type": "array", "items": _num, "minItems": 1}

SCHEMA = {
    "$defs": {"vec": _VEC, "mat": _MAT, "box": _BOX, "set": _SET},
    "type": "object",
    "properties": {
        "plant": {"oneOf": [
            {"type": "object", "properties": {"kind": {"const": "demo"}},
             "required": ["kind"], "additionalProperties": False},
            {"type": "object", "properties": {"kind": {"const": "lifted"}, "G": _DENSE, "w": {"$ref": "#/$defs/vec"}},
             "required": ["kind", "G", "w"], "additionalProperties": False},
            {"type": "object", "properties": {
                "kind": {"const": "ltv"}, "horizon": {"type": "integer", "minimum": 1},
                "A": _SEQ_OR_MAT, "B": _SEQ_OR_MAT, "C": _SEQ_OR_MAT, "c": _SEQ_OR_VEC,
                "x0": {"type": "array", "items": _num, "minItems": 1}},
             "required": ["kind", "A", "B", "C", "c", "x0"], "additionalProperties": False},
        ]},
        "uncertainty": {"oneOf": [
            {"type": "object", "properties": {
                "kind": {"const": "demo"}, "true_weights": _WEIGHTS, "model_weights": _WEIGHTS},
             "required": ["kind", "true_weights", "model_weights"], "additionalProperties": False},
            {"type": "object", "properties": {
                "kind": {"const": "scales"}, "G_scales": _WEIGHTS, "w_scales": _WEIGHTS,
                "true_weights": _WEIGHTS, "model_weights": _WEIGHTS},
             "required": ["kind", "G_scales", "true_weights", "model_weights"], "additionalProperties": False},
            {"type": "object", "properties": {
                "kind": {"const": "vertices"},
                "vertices": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "properties": {"G": _DENSE, "w": {"$ref": "#/$defs/vec"}},
                    "required": ["G", "w"], "additionalProperties": False}},
                "true_weights": _WEIGHTS, "model_weights": _WEIGHTS},
             "required": ["kind", "vertices", "true_weights", "model_weights"], "additionalProperties": False},
        ]},
        "constraints": {"type": "object", "properties": {
            "U": {"$ref": "#/$defs/set"}, "Y": {"$ref": "#/$defs/set"}, "D": {"$ref": "#/$defs/box"}},
            "required": ["U", "Y", "D"], "additionalProperties": False},
        "weights": {"type": "object", "properties": {"Q": {"$ref": "#/$defs/mat"}, "R": {"$ref": "#/$defs/mat"}},
                    "required": ["Q", "R"], "additionalProperties": False},
        "reference": {"$ref": "#/$defs/vec"},
        "policy": {"type": "object", "properties": {
            "alpha": {"oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0}]},
            "stop_eps": {"type": "number", "minimum": 0},
            "k_max": {"type": "integer", "minimum": 0},
            "u0": {"oneOf": [{"type": "null"}, {"$ref": "#/$defs/vec"}]}},
            "additionalProperties": False},
        "seed": {"type": "integer", "minimum": 0},
        "metrics": {"type": "object", "properties": {
            "cost_tolerance": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False},
        "sweep": {"type": "object", "properties": {
            "parameter": {"enum": list(SWEEP_PARAMETERS)},
            "values": {"type": "array", "items": _num, "minItems": 1},
            "far_vertex": {"type": "integer", "minimum": 0},
            "replicates": {"type": "integer", "minimum": 1}},
            "required": ["parameter", "values"], "additionalProperties": False},
    },
    "required": ["uncertainty", "constraints", "weights", "reference"],
    "additionalProperties": False,
}
jsonschema.Draft202012Validator.check_schema(SCHEMA)
_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


@dataclass
class SweepSpec:
    parameter: str
    values: list
    far_vertex: int | None = None
    replicates: int = 1


@dataclass
class ExperimentConfig:
    """Fully expanded experiment; ``raw`` is the echo that reproduces it."""

    raw: dict
    plant: LiftedSystem
    unc: UncertaintySet
    true_weights: np.ndarray
    U: Box | Polytope | None
    Y: Box | Polytope | None
    D: Box
    Q: np.ndarray
    R: np.ndarray
    r: np.ndarray
    alpha: float | None = None
    stop_eps: float = 1e-6
    k_max: int = 50
    u0: np.ndarray | None = None
    seed: int = 0
    cost_tolerance: float = 1e-3
    sweep: SweepSpec | None = None
    source: str | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.plant.m

    @property
    def n(self) -> int:
        return self.plant.n

    def with_seed(self, seed: int) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = int(seed)
        return parse_config(raw, self.source)


# -- expansion helpers ------------------------------------------------------------

def _vec(spec, dim: int, path: str, null_value: float | None = None) -> np.ndarray:
    if isinstance(spec, dict):
        pattern = spec["repeat"]
        if dim % len(pattern):
            raise ConfigError(path, f"repeat pattern of length {len(pattern)} does not tile dimension {dim}")
        spec = pattern * (dim // len(pattern))
    if isinstance(spec, (int, float)):
        return np.full(dim, float(spec))
    if len(spec) != dim:
        raise ConfigError(path, f"expected {dim} entries, got {len(spec)}")
    out = np.empty(dim)
    for i, v in enumerate(spec):
        if v is None:
            if null_value is None:
                raise ConfigError(f"{path}[{i}]", "null is only allowed in box bounds")
            out[i] = null_value
        else:
            out[i] = float(v)
    return out


def _dense(spec, path: str, shape: tuple | None = None) -> np.ndarray:
    widths = {len(row) for row in spec}
    if len(widths) != 1:
        raise ConfigError(path, "rows have different lengths")
    A = np.array(spec, dtype=float)
    if shape is not None and A.shape != shape:
        raise ConfigError(path, f"expected shape {shape}, got {A.shape}")
    return A


def _mat(spec, dim: int, path: str) -> np.ndarray:
    if isinstance(spec, (int, float)):
        return float(spec) * np.eye(dim)
    if "diag" in spec:
        return np.diag(_vec(spec["diag"], dim, f"{path}.diag"))
    if "dense" in spec:
        return _dense(spec["dense"], f"{path}.dense", (dim, dim))
    kron = spec["kron"]
    block = kron["block"]
    bdim = _block_dim(block, f"{path}.kron.block")
    k = kron.get("identity")
    if k is None:
        if bdim is None or dim % bdim:
            raise ConfigError(f"{path}.kron", f"cannot infer identity size for dimension {dim}")
        k = dim // bdim
    elif bdim is None:
        if dim % k:
            raise ConfigError(f"{path}.kron.identity", f"{k} does not divide dimension {dim}")
        bdim = dim // k
    if k * bdim != dim:
        raise ConfigError(f"{path}.kron", f"I_{k} kron ({bdim}x{bdim}) does not match dimension {dim}")
    return np.kron(np.eye(k), _mat(block, bdim, f"{path}.kron.block"))


def _block_dim(spec, path: str) -> int | None:
    """Size implied by a matrix spec, or None for a bare scalar."""
    if isinstance(spec, (int, float)):
        return None
    if "diag" in spec:
        d = spec["diag"]
        return len(d) if isinstance(d, list) else None
    if "dense" in spec:
        return len(spec["dense"])
    inner = _block_dim(spec["kron"]["block"], f"{path}.kron.block")
    k = spec["kron"].get("identity")
    return None if inner is None or k is None else inner * k


def _set(spec, dim: int, path: str):
    if spec is None:
        return None
    if "box" in spec:
        return _box(spec, dim, path)
    hs = spec["halfspaces"]
    A = _dense(hs["A"], f"{path}.halfspaces.A")
    if A.shape[1] != dim:
        raise ConfigError(f"{path}.halfspaces.A", f"expected {dim} columns, got {A.shape[1]}")
    if len(hs["b"]) != A.shape[0]:
        raise ConfigError(f"{path}.halfspaces.b", f"expected {A.shape[0]} entries, got {len(hs['b'])}")
    zero = np.flatnonzero(np.linalg.norm(A, axis=1) == 0)
    if zero.size:
        raise ConfigError(f"{path}.halfspaces.A[{int(zero[0])}]", "zero row")
    return Polytope(A, np.array(hs["b"], dtype=float))


def _box(spec, dim: int, path: str) -> Box:
    lo = _vec(spec["box"]["lower"], dim, f"{path}.box.lower", -np.inf)
    hi = _vec(spec["box"]["upper"], dim, f"{path}.box.upper", np.inf)
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        i = int(bad[0])
        raise ConfigError(f"{path}.box", f"lower > upper at coordinate {i} ({lo[i]} > {hi[i]})")
    return Box(lo, hi)


def _seq(spec, count: int | None, path: str, vector: bool = False) -> list:
    if isinstance(spec, dict):
        items = spec["sequence"]
        if count is not None and len(items) != count:
            raise ConfigError(f"{path}.sequence", f"expected {count} entries, got {len(items)}")
        return [np.array(x, dtype=float) if vector else _dense(x, f"{path}.sequence[{i}]")
                for i, x in enumerate(items)]
    if count is None:
        raise ConfigError(path, "a constant matrix needs plant.horizon")
    val = np.array(spec, dtype=float) if vector else _dense(spec, path)
    return [val] * count


def _plant(spec) -> LiftedSystem:
    kind = spec["kind"]
    if kind == "demo":
        return demo_lifted()
    if kind == "lifted":
        G = _dense(spec["G"], "plant.G")
        return LiftedSystem(G, _vec(spec["w"], G.shape[0], "plant.w"))
    T = spec.get("horizon")
    A = _seq(spec["A"], T, "plant.A")
    T = len(A)
    B = _seq(spec["B"], T, "plant.B")
    C = _seq(spec["C"], T + 1, "plant.C")
    c = _seq(spec["c"], T + 1, "plant.c", vector=True)
    try:
        return build_lifted(LtvRealization(A, B, C, c, np.array(spec["x0"], dtype=float)))
    except DimensionError as exc:
        raise ConfigError("plant", str(exc)) from None


def _uncertainty(spec, plant_spec) -> tuple[UncertaintySet, LiftedSystem, np.ndarray]:
    """Vertex set, the simulated true process (a blend of the vertices) and
    its blend weights."""
    kind = spec["kind"]
    if kind == "demo":
        if plant_spec is None or plant_spec["kind"] != "demo":
            raise ConfigError("uncertainty.kind", "the demo vertex set requires plant.kind = demo")
        vs = demo_vertices()
        Gs, ws = [v.G for v in vs], [v.w for v in vs]
    elif kind == "scales":
        if plant_spec is None:
            raise ConfigError("plant", "scaled vertices need a base plant")
        base = _plant(plant_spec)
        gs = spec["G_scales"]
        wsc = spec.get("w_scales", [1.0] * len(gs))
        if len(wsc) != len(gs):
            raise ConfigError("uncertainty.w_scales", f"expected {len(gs)} entries, got {len(wsc)}")
        Gs = [s * base.G for s in gs]
        ws = [s * base.w for s in wsc]
    else:
        if plant_spec is not None:
            raise ConfigError("plant", "omit the plant when vertices are given explicitly")
        Gs, ws = [], []
        for i, v in enumerate(spec["vertices"]):
            G = _dense(v["G"], f"uncertainty.vertices[{i}].G")
            if Gs and G.shape != Gs[0].shape:
                raise ConfigError(f"uncertainty.vertices[{i}].G", f"shape {G.shape} differs from vertex 0 {Gs[0].shape}")
            Gs.append(G)
            ws.append(_vec(v["w"], G.shape[0], f"uncertainty.vertices[{i}].w"))
    N = len(Gs)
    lam = {}
    for key in ("true_weights", "model_weights"):
        try:
            lam[key] = check_simplex(spec[key], N)
        except ValueError as exc:
            raise ConfigError(f"uncertainty.{key}", str(exc)) from None
    unc = UncertaintySet(Gs, ws, lam["model_weights"])
    G = sum(l * g for l, g in zip(lam["true_weights"], Gs))
    w = sum(l * v for l, v in zip(lam["true_weights"], ws))
    return unc, LiftedSystem(G, w), lam["true_weights"]


# -- entry points -------------------------------------------------------------------

def parse_config(raw: dict, source: str | None = None) -> ExperimentConfig:
    errors = sorted(_VALIDATOR.iter_errors(raw), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = _deepest(errors[0])
        path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path).lstrip(".")
        raise ConfigError(path or "<root>", err.message)

    unc, plant, lam_true = _uncertainty(raw["uncertainty"], raw.get("plant"))
    m, n = unc.shape
    cons = raw["constraints"]
    U = _set(cons["U"], n, "constraints.U")
    Y = _set(cons["Y"], m, "constraints.Y")
    D = _box(cons["D"], m, "constraints.D")
    if not D.is_bounded():
        raise ConfigError("constraints.D", "disturbance box must be bounded")
    if np.any(D.lower > 0) or np.any(D.upper < 0):
        i = int(np.flatnonzero((D.lower > 0) | (D.upper < 0))[0])
        raise ConfigError("constraints.D.box", f"coordinate {i} does not contain 0")
    Q = _mat(raw["weights"]["Q"], m, "weights.Q")
    R = _mat(raw["weights"]["R"], n, "weights.R")
    for name, S in (("Q", Q), ("R", R)):
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ConfigError(f"weights.{name}", "matrix is not symmetric")
        if np.linalg.eigvalsh(S)[0] < -1e-12 * max(1.0, np.abs(S).max()):
            raise ConfigError(f"weights.{name}", "matrix is not positive semidefinite")
    r = _vec(raw["reference"], m, "reference")

    pol = raw.get("policy", {})
    u0 = pol.get("u0")
    sweep = None
    if "sweep" in raw:
        sw = raw["sweep"]
        sweep = SweepSpec(sw["parameter"], [float(v) for v in sw["values"]],
                          sw.get("far_vertex"), sw.get("replicates", 1))
        if sweep.far_vertex is not None and sweep.far_vertex >= unc.N:
            raise ConfigError("sweep.far_vertex", f"index {sweep.far_vertex} but only {unc.N} vertices")
        for i, v in enumerate(sweep.values):
            if sweep.parameter == "model_blend" and not 0.0 <= v <= 1.0:
                raise ConfigError(f"sweep.values[{i}]", "model blend must lie in [0, 1]")
            if sweep.parameter in ("disturbance_radius", "seed") and v < 0:
                raise ConfigError(f"sweep.values[{i}]", "must be non-negative")
            if sweep.parameter == "alpha" and v <= 0:
                raise ConfigError(f"sweep.values[{i}]", "alpha must be positive")
            if sweep.parameter == "seed" and v != int(v):
                raise ConfigError(f"sweep.values[{i}]", "seeds must be integers")
        if sweep.parameter == "disturbance_radius" and D.radius() == 0 and any(sweep.values):
            raise ConfigError("constraints.D", "a radius sweep needs a D with non-zero radius to scale")

    return ExperimentConfig(
        raw=copy.deepcopy(raw), plant=plant, unc=unc, true_weights=lam_true,
        U=U, Y=Y, D=D, Q=Q, R=R, r=r,
        alpha=pol.get("alpha"), stop_eps=float(pol.get("stop_eps", 1e-6)),
        k_max=int(pol.get("k_max", 50)),
        u0=None if u0 is None else _vec(u0, n, "policy.u0"),
        seed=int(raw.get("seed", 0)),
        cost_tolerance=float(raw.get("metrics", {}).get("cost_tolerance", 1e-3)),
        sweep=sweep, source=source,
    )


def _deepest(err: jsonschema.ValidationError) -> jsonschema.ValidationError:
    # oneOf failures carry sub-errors; the deepest usually names the real problem
    while err.context:
        err = max(err.context, key=lambda e: len(e.absolute_path))
    return err


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return parse_config(raw, str(path))


def demo_raw(rad: float = 1e-3) -> dict:
    """The shipped demo experiment as a raw config dict."""
    return {
        "plant": {"kind": "demo"},
        "uncertainty": {"kind": "demo", "true_weights": list(DEMO_TRUE_WEIGHTS),
                        "model_weights": [0.25, 0.25, 0.25, 0.25]},
        "constraints": {
            "U": None,
            "Y": {"box": {"lower": {"repeat": [None, -1.2, None]}, "upper": {"repeat": [None, 1.2, None]}}},
            "D": {"box": {"lower": {"repeat": [-rad, -rad / 10, 0.0]}, "upper": {"repeat": [rad, rad / 10, 0.0]}}},
        },
        "weights": {"Q": {"kron": {"block": {"diag": [100.0, 0.0, 0.0]}}}, "R": 0.01},
        "reference": 0.0,
        "policy": {"alpha": None, "stop_eps": 1e-6, "k_max": 50},
        "seed": 0,
    }
