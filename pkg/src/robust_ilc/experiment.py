"""Experiment orchestration: build, certify, simulate, check and emit.

A run is a sweep with a single point and no swept parameter, so both share
one code path and one output layout.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (CertificateReport, FixedPointDiverged, NotStronglyMonotone, OraclePoints,
                       StepOutOfRange, certify)
from .config import ExperimentConfig
from .lifted import DisturbanceModel
from .policy import (ConstraintViolation, IterationTrace, PolicyConfig, PolicyError, run_ilc,
                     true_cost)
from .qp import QpFailure
from .uncertainty import Box, EmptyTightenedSet, UncertaintySet, build_tightened_set

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_CERTIFICATE = 4
EXIT_NUMERIC = 5

ENVELOPE_TOL = 1e-6
SLACK_TOL = 1e-8

TRACE_COLUMNS = ("k", "surrogate_cost", "true_cost", "dist_to_ubar_W", "dist_to_ustar_W", "max_slack")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, EmptyTightenedSet):
        return EXIT_INFEASIBLE
    if isinstance(exc, (NotStronglyMonotone, StepOutOfRange, FixedPointDiverged, ConstraintViolation)):
        return EXIT_CERTIFICATE
    if isinstance(exc, PolicyError) and exc.__cause__ is not None:
        return exit_code_for(exc.__cause__)
    if isinstance(exc, (QpFailure, PolicyError, ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, ValueError):
        return EXIT_CONFIG
    return EXIT_NUMERIC


@dataclass
class RunResult:
    seed: int
    trace: IterationTrace
    summary: dict
    warnings: list = field(default_factory=list)
    breach: bool = False


@dataclass
class PointResult:
    index: int
    value: float | None
    certificate: CertificateReport | None = None
    oracle: OraclePoints | None = None
    eta_tilde: float | None = None
    runs: list = field(default_factory=list)
    error: dict | None = None
    exit_code: int = EXIT_OK
    exception: BaseException | None = field(default=None, repr=False)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    kind: str
    points: list
    parameter: str | None = None
    # wall-clock seconds per stage; kept out of emitted files for determinism
    timings: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        for p in self.points:
            if p.exit_code != EXIT_OK:
                return p.exit_code
        return EXIT_OK

    @property
    def runs(self) -> list:
        return [(p, r) for p in self.points for r in p.runs]


# -- building one point -----------------------------------------------------------

def far_vertex(unc: UncertaintySet, G_true: np.ndarray) -> int:
    return int(np.argmax([np.linalg.norm(G - G_true) for G in unc.G]))


def point_setup(cfg: ExperimentConfig, parameter: str | None = None, value: float | None = None):
    """(uncertainty set with the model blend, disturbance box, alpha, seed) for one grid value."""
    unc, D, alpha, seed = cfg.unc, cfg.D, cfg.alpha, cfg.seed
    if parameter == "model_blend":
        j = cfg.sweep.far_vertex if cfg.sweep and cfg.sweep.far_vertex is not None \
            else far_vertex(unc, cfg.plant.G)
        lam = (1.0 - value) * cfg.true_weights
        lam[j] += value
        unc = UncertaintySet(unc.G, unc.w, lam / lam.sum())
    elif parameter == "disturbance_radius":
        scale = 0.0 if value == 0 else value / D.radius()
        D = Box(D.lower * scale, D.upper * scale)
    elif parameter == "alpha":
        alpha = value
    elif parameter == "seed":
        seed = int(value)
    return unc, D, alpha, seed


def _summary(trace: IterationTrace, rep: CertificateReport, orc: OraclePoints,
             cfg: ExperimentConfig, pcfg: PolicyConfig) -> tuple[dict, list, bool]:
    phi_star = true_cost(orc.u_star, cfg.plant, pcfg)
    excess = trace.column("true_cost") - phi_star
    dist = trace.column("dist_ubar")
    d_sup = max(float(np.linalg.norm(rec.d)) for rec in trace.records)
    K = trace.iterations
    # iterations-to-tolerance is measured against the policy's own limit u_bar
    gap = trace.column("true_cost") - true_cost(orc.u_bar, cfg.plant, pcfg)
    hit = np.flatnonzero(gap <= cfg.cost_tolerance * max(gap[0], 0.0))
    stated = [rep.envelope(k, dist[0], d_sup) - dist[k] for k in range(K + 1)]
    corrected = [rep.envelope(k, dist[0], d_sup, corrected=True) - dist[k] for k in range(K + 1)]
    cost_env = rep.cost_envelope(K, dist[0], d_sup)
    cost_env_c = rep.cost_envelope(K, dist[0], d_sup, corrected=True)
    slack = float(trace.column("max_slack").max())
    s = {
        "status": trace.status,
        "iterations": K,
        "final_surrogate_cost": trace.final.surrogate_cost,
        "final_true_cost": trace.final.true_cost,
        "cost_excess": float(excess[-1]),
        "iterations_to_tolerance": int(hit[0]) if hit.size else None,
        "max_slack": slack,
        "final_dist_to_ubar_W": float(dist[-1]),
        "final_dist_to_ustar_W": trace.final.dist_ustar,
        "d_sup": d_sup,
        "iss_margin_stated": float(min(stated)),
        "iss_margin_corrected": float(min(corrected)),
        "cost_envelope_stated": cost_env,
        "cost_envelope_corrected": cost_env_c,
    }
    notes, breach = [], False
    if slack > SLACK_TOL:
        notes.append(f"constraint slack {slack:.3e} exceeds {SLACK_TOL:g}")
        breach = True
    if s["iss_margin_corrected"] < -ENVELOPE_TOL:
        notes.append(f"ISS envelope (corrected gain) breached by {-s['iss_margin_corrected']:.3e}")
        breach = True
    if s["cost_excess"] > cost_env_c + ENVELOPE_TOL:
        notes.append(f"cost envelope (corrected constants) breached: {s['cost_excess']:.3e} > {cost_env_c:.3e}")
        breach = True
    if s["iss_margin_stated"] < -ENVELOPE_TOL:
        notes.append(f"ISS envelope with the stated gamma breached by {-s['iss_margin_stated']:.3e}")
    if s["cost_excess"] > cost_env + ENVELOPE_TOL:
        notes.append(f"cost envelope with the stated gamma, delta breached: {s['cost_excess']:.3e} > {cost_env:.3e}")
    return s, notes, breach


def run_point(cfg: ExperimentConfig, index: int = 0, parameter: str | None = None,
              value: float | None = None, simulate: bool = True, timings: dict | None = None) -> PointResult:
    """Build, certify and (optionally) simulate one grid point; errors are recorded, not raised."""
    point = PointResult(index, value)
    timings = {} if timings is None else timings
    stage = "setup"

    def tick(name, t0):
        timings[f"{index}:{name}"] = time.perf_counter() - t0

    try:
        t0 = time.perf_counter()
        unc, D, alpha, seed = point_setup(cfg, parameter, value)
        stage = "tighten"
        X = build_tightened_set(cfg.U, cfg.Y, D, unc)
        stage = "policy"
        M = sum(l * g for l, g in zip(unc.nominal_weights, unc.G))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pcfg = PolicyConfig(cfg.Q, cfg.R, cfg.r, M, X, unc=unc, alpha=alpha,
                                stop_eps=cfg.stop_eps, k_max=cfg.k_max)
        tick("build", t0)
        stage = "certify"
        t0 = time.perf_counter()
        rep, orc = certify(pcfg, unc, cfg.plant.G, cfg.plant.w)
        point.certificate, point.oracle, point.eta_tilde = rep, orc, rep.eta
        tick("certify", t0)
        if not simulate:
            return point
        stage = "simulate"
        seeds = [seed + j for j in range(cfg.sweep.replicates if cfg.sweep else 1)]
        for s in seeds:
            t0 = time.perf_counter()
            trace = run_ilc(cfg.plant, DisturbanceModel(D, seed=s), pcfg, u0=cfg.u0,
                            u_bar=orc.u_bar, u_star=orc.u_star)
            summary, notes, breach = _summary(trace, rep, orc, cfg, pcfg)
            point.runs.append(RunResult(s, trace, summary, notes, breach))
            tick(f"simulate[{s}]", t0)
            if breach:
                point.exit_code = EXIT_CERTIFICATE
    except Exception as exc:  # recorded per point so sweeps continue
        err = StageError(stage, exc)
        point.exception = err
        point.exit_code = exit_code_for(exc)
        point.error = {"stage": stage, "kind": type(exc).__name__, "message": str(exc),
                       "exit_code": point.exit_code}
        if isinstance(exc, PolicyError) and exc.trace is not None and exc.trace.records:
            point.runs.append(RunResult(seed, exc.trace, {"status": exc.trace.status}, [str(exc)], True))
        logger.warning("point %d failed: %s", index, err)
    return point


def run_experiment(cfg: ExperimentConfig, simulate: bool = True, strict: bool = True) -> ExperimentResult:
    """Single experiment at the configured parameters.

    With ``strict`` a failing stage raises :class:`StageError`; otherwise the
    failure is recorded in the returned result.
    """
    timings = {}
    point = run_point(cfg, 0, simulate=simulate, timings=timings)
    if strict and point.exception is not None:
        raise point.exception
    return ExperimentResult(cfg, "certify" if not simulate else "run", [point], timings=timings)


def run_sweep(cfg: ExperimentConfig, simulate: bool = True) -> ExperimentResult:
    if cfg.sweep is None:
        raise ValueError("config has no sweep section")
    timings = {}
    points = [run_point(cfg, i, cfg.sweep.parameter, v, simulate, timings)
              for i, v in enumerate(cfg.sweep.values)]
    return ExperimentResult(cfg, "sweep", points, cfg.sweep.parameter, timings)


# -- emission -----------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return "%.17g" % float(x)


def _clean(obj):
    """JSON-safe copy: numpy to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def trace_rows(trace: IterationTrace) -> list:
    return [[rec.k, rec.surrogate_cost, rec.true_cost, rec.dist_ubar, rec.dist_ustar, rec.max_slack]
            for rec in trace.records]


def write_trace_csv(trace: IterationTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRACE_COLUMNS)
        for row in trace_rows(trace):
            wr.writerow([_fmt(v) for v in row])


def _trace_name(result: ExperimentResult, p: PointResult, r: RunResult) -> str:
    if len(result.runs) == 1:
        return "trace.csv"
    return f"trace_p{p.index:03d}_s{r.seed}.csv"


def report_dict(result: ExperimentResult) -> dict:
    points = []
    for p in result.points:
        entry = {
            "index": p.index,
            "value": p.value,
            "certificate": p.certificate.to_dict() if p.certificate else None,
            "oracle": None if p.oracle is None else {
                "u_star": p.oracle.u_star, "u_bar": p.oracle.u_bar,
                "kkt_residual": p.oracle.kkt_residual, "vi_residual": p.oracle.vi_residual},
            "error": p.error,
            "exit_code": p.exit_code,
            "runs": [],
        }
        for r in p.runs:
            entry["runs"].append({
                "seed": r.seed,
                "trace_file": _trace_name(result, p, r),
                "summary": r.summary,
                "warnings": r.warnings,
                "trace": [{"k": rec.k, "u": rec.u, "y": rec.y, "d": rec.d,
                           "surrogate_cost": rec.surrogate_cost, "true_cost": rec.true_cost,
                           "dist_to_ubar_W": rec.dist_ubar, "dist_to_ustar_W": rec.dist_ustar,
                           "max_slack": rec.max_slack} for rec in r.trace.records],
            })
        points.append(entry)
    return _clean({
        "kind": result.kind,
        "parameter": result.parameter,
        "exit_code": result.exit_code,
        "versions": {"robust_ilc": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "config": result.config.raw,
        "points": points,
    })


SUMMARY_COLUMNS = ("point", "value", "seed", "status", "iterations", "final_surrogate_cost",
                   "final_true_cost", "cost_excess", "iterations_to_tolerance", "max_slack",
                   "eta_tilde", "error")


def emit(result: ExperimentResult, out_dir, formats=("csv", "json")) -> list:
    """Write the result; returns the written paths in a fixed order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    formats = set(formats)
    unknown = formats - {"csv", "json", "plot"}
    if unknown:
        raise ValueError(f"unknown output formats: {sorted(unknown)}")

    if "csv" in formats:
        for p, r in result.runs:
            path = out / _trace_name(result, p, r)
            write_trace_csv(r.trace, path)
            written.append(path)
        if result.kind == "sweep":
            path = out / "summary.csv"
            with open(path, "w", newline="") as fh:
                wr = csv.writer(fh, lineterminator="\n")
                wr.writerow(SUMMARY_COLUMNS)
                for p in result.points:
                    err = p.error["kind"] if p.error else ""
                    runs = p.runs or [None]
                    for r in runs:
                        s = r.summary if r is not None else {}
                        wr.writerow([p.index, _fmt(p.value), "" if r is None else r.seed,
                                     s.get("status", "error" if p.error else ""),
                                     _fmt(s.get("iterations")), _fmt(s.get("final_surrogate_cost")),
                                     _fmt(s.get("final_true_cost")), _fmt(s.get("cost_excess")),
                                     _fmt(s.get("iterations_to_tolerance")), _fmt(s.get("max_slack")),
                                     _fmt(p.eta_tilde), err])
            written.append(path)

    if "json" in formats:
        path = out / "report.json"
        with open(path, "w") as fh:
            json.dump(report_dict(result), fh, indent=1, sort_keys=True, allow_nan=False)
            fh.write("\n")
        written.append(path)

    if "plot" in formats:
        path = out / "plot_cost.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("point", "seed", "k", "surrogate_cost", "true_cost", "cost_excess"))
            for p, r in result.runs:
                phi_star = r.summary.get("final_true_cost", np.nan) - r.summary.get("cost_excess", np.nan)
                for rec in r.trace.records:
                    wr.writerow([p.index, r.seed, rec.k, _fmt(rec.surrogate_cost), _fmt(rec.true_cost),
                                 _fmt(rec.true_cost - phi_star)])
        written.append(path)
        path = out / "plot_trajectory.csv"
        r_vec = result.config.r
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("point", "seed", "index", "reference", "y_first", "y_final"))
            for p, r in result.runs:
                y0, yK = r.trace.records[0].y, r.trace.final.y
                for i in range(len(y0)):
                    wr.writerow([p.index, r.seed, i, _fmt(r_vec[i]), _fmt(y0[i]), _fmt(yK[i])])
        written.append(path)
    return written
