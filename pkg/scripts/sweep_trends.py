"""Model-quality and noise-level sweeps on the demo plant.

Prints the median trend tables (rate and iterations-to-tolerance against
the model blend; terminal cost excess against rad D) and writes the sweep
outputs under ``out/``.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from robust_ilc.config import load_config
from robust_ilc.experiment import emit, run_sweep

ROOT = Path(__file__).resolve().parents[1]


def table(result, key):
    rows = []
    for p in result.points:
        if p.error:
            rows.append((p.value, None, None, p.error["kind"]))
            continue
        vals = [r.summary[key] for r in p.runs]
        vals = [np.inf if v is None else v for v in vals]
        rows.append((p.value, p.eta_tilde, float(np.median(vals)), ""))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--which", choices=("model", "noise", "both"), default="both")
    ap.add_argument("--out", default=ROOT / "out")
    args = ap.parse_args()

    jobs = []
    if args.which in ("model", "both"):
        jobs.append(("demo_sweep_model", "iterations_to_tolerance"))
    if args.which in ("noise", "both"):
        jobs.append(("demo_sweep_noise", "cost_excess"))
    code = 0
    for name, key in jobs:
        result = run_sweep(load_config(ROOT / "configs" / f"{name}.json"))
        print(f"\n{name}: {result.parameter}")
        print(f"{'value':>10} {'eta~':>8} {'median ' + key:>28}")
        for value, eta, med, err in table(result, key):
            if err:
                print(f"{value:>10g} {'':>8} {err:>28}")
            else:
                print(f"{value:>10g} {eta:8.4f} {med:28.6g}")
        emit(result, Path(args.out) / name, ("csv", "json", "plot"))
        code = code or result.exit_code
    return code


if __name__ == "__main__":
    sys.exit(main())
