"""Averaged, quenched and single-path convergence on a model configuration.

    python3 scripts/convergence_study.py configs/c1.json --out out/study
"""
import argparse
import json
from pathlib import Path

from netlim.cli import load_config
from netlim.harness import (ExperimentPlan, clt_envelope, run_averaged_convergence,
                            run_ergodic_path, run_quenched_convergence, window_functional)
from netlim.limit_law import solve_limit_law


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default="out/study")
    ap.add_argument("--trials", type=int, default=20)
    args = ap.parse_args()

    cfg = load_config(args.config)
    p, seed = cfg.params, cfg.seed
    raw = cfg.plan
    law = solve_limit_law(p, cfg.quadrature, cfg.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    plan = ExperimentPlan(raw["n_list"], args.trials, seed, threads=cfg.threads)
    avg = run_averaged_convergence(plan, p, cfg.quadrature, law)
    print("averaged: n, median ||c_hat - c||, CLT envelope")
    for n in plan.n_list:
        print(f"  {n:5d}  {avg.median('mean_err', n):.4f}  {clt_envelope(law, n):.4f}")
    print(f"  log-log slope {avg.extras['loglog_slope']:.3f}")

    qplan = ExperimentPlan(raw["n_list"], args.trials, seed, threads=cfg.threads,
                           exceedance_n_list=raw.get("exceedance_n_list", raw["n_list"][:3]),
                           exceedance_draws=raw.get("exceedance_draws", 400))
    qu = run_quenched_convergence(qplan, p, cfg.quadrature, law)
    print("quenched: n, median error, ratio to averaged")
    for n in qplan.n_list:
        print(f"  {n:5d}  {qu.median('mean_err', n):.4f}  "
              f"{qu.median('mean_err', n) / avg.median('mean_err', n):.2f}")
    ex = qu.extras["exceedance"]
    print(f"  exceedance at eps={ex['eps']:.4f}: {ex['fractions']}")

    eplan = ExperimentPlan(raw.get("ergodic_n_list", [50, 200, 800]), 1, seed,
                           mc_samples=raw.get("mc_samples", 10**6))
    h = window_functional(raw.get("h", "f_pair_T"), p)
    erg = run_ergodic_path(eplan, p, cfg.quadrature, h, raw.get("m", 1), law)
    print(f"ergodic: limit expectation {erg.extras['limit_expectation']:.5f}")
    for n in eplan.n_list:
        print(f"  {n:5d}  gap {erg.values('gap', n)[0]:.4f}  "
              f"stderr {erg.values('combined_stderr', n)[0]:.4f}")

    for name, rep in (("averaged", avg), ("quenched", qu), ("ergodic", erg)):
        (out / f"{name}.csv").write_text(rep.to_csv())
        (out / f"{name}.json").write_text(rep.to_json())
    (out / "limitlaw.json").write_text(law.dumps())
    print(json.dumps({"wrote": str(out)}))


if __name__ == "__main__":
    main()
