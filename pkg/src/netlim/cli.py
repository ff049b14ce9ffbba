"""Command-line entry point: ``netlim --config run.json --command limit``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numerical error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .harness import (ExperimentPlan, clt_envelope, run_averaged_convergence,
                      run_ergodic_path, run_quenched_convergence, window_functional)
from .limit_law import LimitLaw, NumericalError, oracle_table, solve_limit_law
from .model import ModelParams, ParamsError, validate_params
from .network import (SimConfig, empirical_stats, ensembles_to_bytes, ensembles_to_csv,
                      sample_weights, simulate, stats_to_json, stream, DYNAMICS, WEIGHTS)
from .quadrature import QuadratureConfig


EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
ENV_PREFIX = "NETLIM_"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    params: ModelParams
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    sim: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    limit_law: str | None = None
    out: str = "out"
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "quadrature": self.quadrature.to_dict(),
            "sim": self.sim,
            "plan": self.plan,
            "oracle": self.oracle,
            "limit_law": self.limit_law,
            "out": self.out,
            "seed": self.seed,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if "params" not in doc:
            raise ConfigError("missing field 'params'")
        try:
            params = ModelParams.from_dict(doc["params"])
        except KeyError as exc:
            raise ConfigError(f"missing field {exc}") from exc
        try:
            quad = QuadratureConfig.from_dict(doc.get("quadrature", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"quadrature: {exc}") from exc
        return cls(
            params=params,
            quadrature=quad,
            sim=dict(doc.get("sim", {})),
            plan=dict(doc.get("plan", {})),
            oracle=dict(doc.get("oracle", {})),
            limit_law=doc.get("limit_law"),
            out=doc.get("out", "out"),
            seed=int(doc.get("seed", 0)),
            threads=int(doc.get("threads", 1)),
        )


def load_config(path: str, env=None) -> RunConfig:
    env = os.environ if env is None else env
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = RunConfig.from_dict(doc)
    if ENV_PREFIX + "SEED" in env:
        cfg.seed = int(env[ENV_PREFIX + "SEED"])
    if ENV_PREFIX + "THREADS" in env:
        cfg.threads = int(env[ENV_PREFIX + "THREADS"])
    if ENV_PREFIX + "OUT" in env:
        cfg.out = env[ENV_PREFIX + "OUT"]
    if cfg.limit_law is not None:
        ref = Path(cfg.limit_law)
        if not ref.is_absolute():
            ref = Path(path).parent / ref
        if not ref.exists():
            raise ConfigError(f"limit_law file not found: {ref}")
        cfg.limit_law = str(ref)
    return cfg


def write_atomic(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _law(cfg: RunConfig) -> LimitLaw:
    if cfg.limit_law:
        law = LimitLaw.loads(Path(cfg.limit_law).read_text())
        if law.params != cfg.params:
            raise ConfigError("limit_law file was computed from different model parameters")
        return law
    return solve_limit_law(cfg.params, cfg.quadrature, cfg.threads)


# ----------------------------------------------------------------------------
# Commands


def cmd_limit(cfg: RunConfig) -> int:
    law = solve_limit_law(validate_params(cfg.params), cfg.quadrature, cfg.threads)
    out = Path(cfg.out) / "limitlaw.json"
    write_atomic(out, law.dumps())
    print("c =", " ".join(f"{x:.10g}" for x in law.c))
    for l in range(law.d + 1):
        print(f"||K^{l}||_F = {np.linalg.norm(law.K[l]):.10g}")
    print(f"wrote {out}")
    return EXIT_OK


def _sim_config(cfg: RunConfig) -> SimConfig:
    if "n" not in cfg.sim:
        raise ConfigError("missing field 'sim.n'")
    sim = SimConfig(int(cfg.sim["n"]), cfg.seed, cfg.sim.get("weight_method", "fft-torus"))
    problems = sim.problems(cfg.params.d)
    if problems:
        raise ParamsError(problems)
    return sim


def cmd_simulate(cfg: RunConfig) -> int:
    p = validate_params(cfg.params)
    sim = _sim_config(cfg)
    trials = int(cfg.sim.get("trials", 1))
    k_max = int(cfg.sim.get("k_max", p.d))
    fmt = cfg.sim.get("format", "csv")
    if fmt not in ("csv", "bin"):
        raise ConfigError(f"sim.format must be 'csv' or 'bin', got {fmt!r}")
    ensembles, stats = [], []
    for tr in range(trials):
        J = sample_weights(p, sim, stream(sim.seed, WEIGHTS, tr))
        ens = simulate(p, sim, J, stream(sim.seed, DYNAMICS, tr))
        ensembles.append(ens)
        stats.append(empirical_stats(ens, p, min(k_max, sim.n)))
        if tr == 0:
            buf = "\n".join(",".join(repr(float(x)) for x in row) for row in J.J) + "\n"
            write_atomic(Path(cfg.out) / "weights.csv", buf)
    out = Path(cfg.out)
    if fmt == "csv":
        write_atomic(out / "ensemble.csv", ensembles_to_csv(ensembles))
    else:
        write_atomic(out / "ensemble.bin", ensembles_to_bytes(ensembles))
    write_atomic(out / "empirical_stats.json",
                 "[" + ",\n".join(stats_to_json(s) for s in stats) + "]\n")
    print(f"simulated {trials} trial(s) at n={sim.n}; wrote {out}")
    return EXIT_OK


def _plan(cfg: RunConfig) -> ExperimentPlan:
    raw = dict(cfg.plan)
    if "n_list" not in raw:
        raise ConfigError("missing field 'plan.n_list'")
    keys = {"n_list", "trials_per_n", "metrics", "k_max", "weight_method", "exceedance_n_list",
            "exceedance_draws", "exceedance_eps", "mc_samples"}
    kwargs = {k: raw[k] for k in keys if k in raw}
    if "metrics" in kwargs:
        kwargs["metrics"] = tuple(kwargs["metrics"])
    plan = ExperimentPlan(seed=cfg.seed, threads=cfg.threads, **kwargs)
    return plan.validate(cfg.params.d)


def cmd_converge(cfg: RunConfig, plot_data: bool = False) -> int:
    p = validate_params(cfg.params)
    plan = _plan(cfg)
    mode = cfg.plan.get("mode", "averaged")
    law = _law(cfg)
    if mode == "averaged":
        report = run_averaged_convergence(plan, p, cfg.quadrature, law)
    elif mode == "quenched":
        report = run_quenched_convergence(plan, p, cfg.quadrature, law)
    elif mode == "ergodic":
        h = window_functional(cfg.plan.get("h", "f_pair_T"), p)
        report = run_ergodic_path(plan, p, cfg.quadrature, h, int(cfg.plan.get("m", 1)), law)
    else:
        raise ConfigError(f"plan.mode must be averaged|quenched|ergodic, got {mode!r}")

    n_last = plan.n_list[-1]
    if mode == "ergodic":
        gap = report.values("gap", n_last)[0]
        se = report.values("combined_stderr", n_last)[0]
        ok, msg = gap <= 4 * se, f"gap {gap:.4g} vs 4 x stderr {4 * se:.4g} at n={n_last}"
    else:
        med, env = report.median("mean_err", n_last), clt_envelope(law, n_last)
        ok, msg = med <= env, f"median mean error {med:.4g} vs CLT envelope {env:.4g} at n={n_last}"
    report.extras["check"] = {"passed": bool(ok), "detail": msg}

    out = Path(cfg.out)
    write_atomic(out / "report.csv", report.to_csv())
    write_atomic(out / "report.json", report.to_json())
    if plot_data:
        for metric, text in report.plot_data().items():
            write_atomic(out / f"plot_{metric}.dat", text)
    print(("PASS " if ok else "FAIL ") + msg)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_oracle(cfg: RunConfig) -> int:
    N = int(cfg.oracle.get("N", 10**6))
    if N < 100:
        raise ConfigError("oracle.N must be >= 100")
    law = _law(cfg)
    rows = oracle_table(law, N, cfg.seed)
    lines = ["entry,quadrature,mc_estimate,stderr,z"]
    lines += [f"{r.entry},{r.quadrature!r},{r.estimate!r},{r.stderr!r},{r.z!r}" for r in rows]
    write_atomic(Path(cfg.out) / "oracle.csv", "\n".join(lines) + "\n")
    zmax = max(abs(r.z) for r in rows)
    print(f"{len(rows)} entries, max |z| = {zmax:.3f}")
    return EXIT_OK if zmax <= 5 else EXIT_VERIFY


COMMANDS = {"limit": cmd_limit, "simulate": cmd_simulate, "converge": cmd_converge,
            "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netlim", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--command", required=True, choices=sorted(COMMANDS))
    ap.add_argument("--out", help="output directory (overrides config and NETLIM_OUT)")
    ap.add_argument("--seed", type=int, help="master seed (overrides NETLIM_SEED)")
    ap.add_argument("--threads", type=int, help="worker cap (overrides NETLIM_THREADS)")
    ap.add_argument("--plot-data", action="store_true",
                    help="converge: also write two-column data files per metric")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.command == "converge":
            return cmd_converge(cfg, plot_data=args.plot_data)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ParamsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
