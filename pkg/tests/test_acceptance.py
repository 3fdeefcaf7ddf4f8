"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run under pytest (the lines are collected into an "acceptance criteria"
section of the terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from robust_ilc.analysis import certify, robust_constants, solve_optimum, true_constants, w_norm
from robust_ilc.cli import main
from robust_ilc.config import load_config
from robust_ilc.experiment import run_sweep
from robust_ilc.instances import random_instance
from robust_ilc.lifted import LiftedSystem, zero_disturbance
from robust_ilc.policy import PolicyConfig, PolicyError, run_ilc
from robust_ilc.qp import weighted_projection
from robust_ilc.uncertainty import Box, Polytope, UncertaintySet, build_tightened_set

try:
    from .oracles import active_set_qp, random_feasible_polytope, random_spd
except ImportError:  # run as a script
    from oracles import active_set_qp, random_feasible_polytope, random_spd

ROOT = Path(__file__).resolve().parents[1]
N_INSTANCES = 100


@lru_cache(maxsize=None)
def instance(seed: int, exact_model: bool = False):
    inst = random_instance(np.random.default_rng(seed), exact_model=exact_model)
    rep, orc = certify(inst.cfg, inst.unc, inst.plant.G, inst.plant.w)
    return inst, rep, orc


def noisy_run(seed: int, noise_seed: int):
    inst, rep, orc = instance(seed)
    return run_ilc(inst.plant, inst.disturbance(noise_seed), inst.cfg, u_bar=orc.u_bar, u_star=orc.u_star)


def test_criterion_1_constraint_satisfaction(report_criterion):
    worst, failures = -np.inf, []
    for s in range(N_INSTANCES):
        inst, _, _ = instance(s)
        try:
            trace = noisy_run(s, 0)
        except PolicyError as exc:
            failures.append((s, str(exc)))
            continue
        worst = max(worst, float(trace.column("max_slack").max()))
        for rec in trace.records:
            if not (inst.U.contains(rec.u, tol=1e-8) and inst.Y.contains(rec.y, tol=1e-8)):
                failures.append((s, f"iterate {rec.k} outside U x Y"))
    ok = not failures and worst <= 1e-8
    report_criterion(1, ok, f"{N_INSTANCES} instances x 50 noisy iterations, worst signed excess {worst:.3e}, "
                            f"{len(failures)} failing")
    assert ok, failures[:3]


def test_criterion_2_noiseless_contraction(report_criterion):
    worst_gap, bad = -np.inf, []
    for s in range(N_INSTANCES):
        inst, rep, orc = instance(s)
        trace = run_ilc(inst.plant, inst.disturbance(noiseless=True), inst.cfg, u_bar=orc.u_bar)
        dist = trace.column("dist_ubar")
        # below this the distance is rounding noise around u_bar
        floor = 1e-9 * max(1.0, w_norm(orc.u_bar, inst.cfg.W))
        for k in range(len(dist) - 1):
            if dist[k] <= floor:
                break
            gap = dist[k + 1] / dist[k] - rep.eta
            worst_gap = max(worst_gap, gap)
            if gap > 1e-6:
                bad.append((s, k, gap))
    ok = not bad
    report_criterion(2, ok, f"max(ratio - eta~) = {worst_gap:.3e} over {N_INSTANCES} instances, "
                            f"{len(bad)} iterations above +1e-6")
    assert ok, bad[:3]


def test_criterion_3_iss_envelope(report_criterion):
    worst, worst_c, bad = -np.inf, -np.inf, []
    for s in range(N_INSTANCES):
        _, rep, _ = instance(s)
        for seed in range(3):
            trace = noisy_run(s, seed)
            dist = trace.column("dist_ubar")
            d_sup = max(float(np.linalg.norm(r.d)) for r in trace.records)
            for k in range(len(dist)):
                over = dist[k] - rep.envelope(k, dist[0], d_sup)
                worst = max(worst, over)
                worst_c = max(worst_c, dist[k] - rep.envelope(k, dist[0], d_sup, corrected=True))
                if over > 1e-6:
                    bad.append((s, seed, k, over))
    ok = not bad
    report_criterion(3, ok, f"max(dist - envelope) = {worst:.3e} with the stated gamma over "
                            f"{N_INSTANCES}x3 runs ({len(bad)} breaches); step-scaled gamma gives {worst_c:.3e}")
    assert ok, bad[:3]


def test_criterion_4_sandwich(report_criterion):
    worst = -np.inf
    for s in range(N_INSTANCES):
        inst, _, _ = instance(s)
        cfg = inst.cfg
        rc = robust_constants(inst.unc, cfg.Q, cfg.R, cfg.M)
        mu_t, L_t = true_constants(inst.plant.G, cfg.Q, cfg.R, cfg.M)
        worst = max(worst, rc.mu - mu_t, mu_t - L_t, L_t - rc.L)
    ok = worst <= 1e-10
    report_criterion(4, ok, f"mu <= mu~ <= L~ <= L, largest violation {worst:.3e} over {N_INSTANCES} draws")
    assert ok


def test_criterion_5_exact_model(report_criterion):
    worst, deltas = 0.0, []
    for s in range(20):
        inst, rep, orc = instance(s, exact_model=True)
        worst = max(worst, w_norm(orc.u_bar - orc.u_star, inst.cfg.W))
        deltas.append(rep.delta)
    ok = worst <= 1e-7 and all(d == 0.0 for d in deltas)
    report_criterion(5, ok, f"max ||u_bar - u*||_W = {worst:.3e}, delta values {sorted(set(deltas))}")
    assert ok


def _box_only_set(A, b):
    n = A.shape[1]
    return build_tightened_set(Polytope(A, b), None, Box.symmetric(0.0, 1),
                               UncertaintySet([np.zeros((1, n))], [np.zeros(1)]))


def test_criterion_6_qp_oracle(report_criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        h = int(rng.integers(1, 7))
        A, b = random_feasible_polytope(rng, n, h)
        X = _box_only_set(A, b)
        W = random_spd(rng, n, cond=100)
        x = rng.normal(scale=3, size=n)
        proj = weighted_projection(x, W, Polytope(A, b))
        worst = max(worst, np.abs(proj - active_set_qp(W, -W @ x, A, b)).max())
        H = random_spd(rng, n, cond=100)
        f = rng.normal(scale=3, size=n)
        worst = max(worst, np.abs(solve_optimum(H, f, X) - active_set_qp(H, f, A, b)).max())
    ok = worst <= 1e-7
    report_criterion(6, ok, f"max deviation from active-set enumeration {worst:.3e} over 200 projections "
                            f"and 200 optima")
    assert ok


def _medians(result, key):
    return [float(np.median([r.summary[key] for r in p.runs])) for p in result.points]


def test_criterion_7_model_error_trend(report_criterion):
    res = run_sweep(load_config(ROOT / "configs" / "demo_sweep_model.json"))
    assert all(p.error is None for p in res.points)
    eta = [p.eta_tilde for p in res.points]
    its = _medians(res, "iterations_to_tolerance")
    ok = bool(np.all(np.diff(eta) >= 0) and np.all(np.diff(its) >= 0))
    report_criterion(7, ok, "eta~ " + " ".join(f"{e:.4f}" for e in eta)
                     + " | median iterations " + " ".join(f"{i:g}" for i in its))
    assert ok


def test_criterion_8_noise_floor_trend(report_criterion):
    res = run_sweep(load_config(ROOT / "configs" / "demo_sweep_noise.json"))
    assert all(p.error is None for p in res.points)
    cost = _medians(res, "final_surrogate_cost")
    excess = _medians(res, "cost_excess")
    env = _medians(res, "cost_envelope_stated")
    env_c = _medians(res, "cost_envelope_corrected")
    # the envelope bounds suboptimality, so the surrogate cost is compared net of phi(u*);
    # true_cost drops the constant 1/2 ||w - r||_Q^2, which is added back here
    cfg = res.config
    e0 = cfg.plant.w - cfg.r
    const = 0.5 * float(e0 @ cfg.Q @ e0)
    phi_star = [const + float(np.median([r.summary["final_true_cost"] - r.summary["cost_excess"]
                                         for r in p.runs])) for p in res.points]
    gap = [c - p for c, p in zip(cost, phi_star)]
    trend = bool(np.all(np.diff(cost) >= 0))
    below = [g <= e for g, e in zip(gap, env)]
    ok = trend and all(below)
    report_criterion(8, ok, "median surrogate " + " ".join(f"{c:.6f}" for c in cost)
                     + f" ({'nondecreasing' if trend else 'not monotone'}); gap vs stated envelope "
                     + " ".join(f"{g:.2e}/{e:.2e}" for g, e in zip(gap, env)))
    print("  informational: median true-cost excess " + " ".join(f"{x:.2e}" for x in excess)
          + f" ({'nondecreasing' if np.all(np.diff(excess) >= 0) else 'not monotone'}), "
          + "below corrected envelope: " + str(all(x <= e for x, e in zip(excess, env_c))))
    assert ok


def test_criterion_9_scalar_closed_form(report_criterion):
    one = np.ones((1, 1))
    unc = UncertaintySet([one], [np.zeros(1)])
    X = build_tightened_set(None, None, Box.symmetric(0.0, 1), unc)
    cfg = PolicyConfig(one, 0.01 * one, [1.0], one, X, unc=unc, stop_eps=0.0, k_max=20)
    trace = run_ilc(LiftedSystem(one, [0.0]), zero_disturbance(1), cfg)
    err = abs(trace.final.u[0] - 1 / 1.01)
    ok = err <= 1e-8
    report_criterion(9, ok, f"alpha = {cfg.alpha:g}, |u_K - 1/1.01| = {err:.3e}")
    assert ok


def test_criterion_10_determinism(report_criterion, tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["run", "--config", str(ROOT / "configs" / "demo.json"), "--out", str(out),
                     "--seed", "7", "--format", "csv,json,plot"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = outs[0].keys() == outs[1].keys() and all(outs[0][k] == outs[1][k] for k in outs[0])
    report_criterion(10, ok, f"{len(outs[0])} files byte-identical across two runs: {sorted(outs[0])}")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([str(Path(__file__).resolve()), "-q", "-p", "no:cacheprovider"]))
