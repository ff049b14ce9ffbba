"""Convergence experiments: finite networks against the computed limit law.

Weak convergence is tracked through a finite family of statistics:
sup-norm mean error, sup-norm lag-covariance errors, per-time KS distances
of the v-marginals and gaps of window test functions.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats as sps

from .limit_law import LimitLaw, sample_limit_law, solve_limit_law
from .model import ModelParams, ParamsError
from .network import (DYNAMICS, EXCEED_DYNAMICS, EXCEED_WEIGHTS, LIMIT_MC, WEIGHTS, SimConfig,
                      empirical_stats, empirical_test_function, sample_weights, simulate, stream,
                      windows)
from .quadrature import QuadratureConfig


@dataclass
class ExperimentPlan:
    n_list: list[int]
    trials_per_n: int = 20
    seed: int = 0
    metrics: tuple[str, ...] = ("mean", "cov", "ks")
    k_max: int | None = None  # defaults to d
    weight_method: str = "fft-torus"
    # quenched exceedance study
    exceedance_n_list: list[int] = field(default_factory=list)
    exceedance_draws: int = 400
    exceedance_eps: float | None = None  # None: median error at the smallest n
    # ergodic study
    mc_samples: int = 10**6
    threads: int = 1

    def problems(self, d: int) -> list[str]:
        out = []
        for name, ns in (("n_list", self.n_list), ("exceedance_n_list", self.exceedance_n_list)):
            if any(b <= a for a, b in zip(ns, ns[1:])):
                out.append(f"{name} must be strictly increasing")
            if any(2 * n + 1 <= 2 * d for n in ns):
                out.append(f"{name}: every 2n+1 must exceed 2d")
        if not self.n_list:
            out.append("n_list must not be empty")
        if self.trials_per_n < 1:
            out.append("trials_per_n must be >= 1")
        bad = set(self.metrics) - {"mean", "cov", "ks"}
        if bad:
            out.append(f"unknown metrics {sorted(bad)}")
        return out

    def validate(self, d: int) -> "ExperimentPlan":
        problems = self.problems(d)
        if problems:
            raise ParamsError(problems)
        return self


@dataclass
class DistanceReport:
    kind: str
    rows: list[dict] = field(default_factory=list)  # {n, trial, metric, value}
    extras: dict = field(default_factory=dict)

    def values(self, metric: str, n: int | None = None) -> np.ndarray:
        return np.array([r["value"] for r in self.rows
                         if r["metric"] == metric and (n is None or r["n"] == n)])

    def median(self, metric: str, n: int) -> float:
        return float(np.median(self.values(metric, n)))

    def iqr(self, metric: str, n: int) -> float:
        q1, q3 = np.percentile(self.values(metric, n), [25, 75])
        return float(q3 - q1)

    @property
    def n_values(self) -> list[int]:
        return sorted({r["n"] for r in self.rows})

    @property
    def metric_names(self) -> list[str]:
        return list(dict.fromkeys(r["metric"] for r in self.rows))

    def summary(self) -> dict:
        out = {"kind": self.kind, "per_n": {}, **self.extras}
        for n in self.n_values:
            out["per_n"][str(n)] = {
                m: {"median": self.median(m, n), "iqr": self.iqr(m, n),
                    "count": int(self.values(m, n).size)}
                for m in self.metric_names if self.values(m, n).size
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "trial", "metric", "value"])
        for r in self.rows:
            w.writerow([r["n"], r["trial"], r["metric"], repr(float(r["value"]))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True)

    def plot_data(self) -> dict[str, str]:
        """Two-column ``x y`` text per metric: 2n+1 against the median."""
        out = {}
        for m in self.metric_names:
            lines = [f"{2 * n + 1} {self.median(m, n)!r}" for n in self.n_values
                     if self.values(m, n).size]
            out[m] = "\n".join(lines) + "\n"
        return out


# ----------------------------------------------------------------------------
# Metrics


def distance_report(stats, law: LimitLaw, n: int, metrics=("mean", "cov", "ks")) -> dict[str, float]:
    """All distances between empirical statistics and the limit law.

    KS p-values use the effective sample size (2n+1)/(2d+1), which discounts
    correlations between neurons closer than d.
    """
    T = law.T
    if stats.c_hat.shape != (T,):
        raise ValueError(f"stats horizon {stats.c_hat.shape} does not match law T={T}")
    out: dict[str, float] = {}
    if "mean" in metrics:
        out["mean_err"] = float(np.max(np.abs(stats.c_hat - law.c)))
    if "cov" in metrics:
        for k in range(stats.K_hat.shape[0]):
            target = law.K_lag(k) + (law.sigma2 * np.eye(T) if k == 0 else 0.0)
            out[f"cov_err_{k}"] = float(np.max(np.abs(stats.K_hat[k] - target)))
    if "ks" in metrics:
        n_eff = max(1, int(round((2 * n + 1) / (2 * law.d + 1))))
        for s in range(1, T + 1):
            sd = np.sqrt(law.sigma2 + law.K[0][s - 1, s - 1])
            D = sps.kstest(stats.v[:, s], "norm", args=(law.c[s - 1], sd)).statistic
            out[f"ks_{s}"] = float(D)
            out[f"ks_p_{s}"] = float(sps.kstwo.sf(D, n_eff))
    return out


def clt_envelope(law: LimitLaw, n: int) -> float:
    """4 * sqrt(long-run variance of v_s across neurons) / sqrt(2n+1), max over s."""
    lrv = law.sigma2 + sum(np.diag(law.K_lag(k)) for k in range(-law.d, law.d + 1))
    return float(4.0 * np.sqrt(np.max(lrv)) / np.sqrt(2 * n + 1))


def loglog_slope(n_values, medians) -> float:
    x = np.log(2 * np.asarray(n_values) + 1.0)
    return float(np.polyfit(x, np.log(np.asarray(medians)), 1)[0])


# ----------------------------------------------------------------------------
# Experiments


def _one_trial(p, law, plan, n, J_rng, dyn_rng):
    sim = SimConfig(n, plan.seed, plan.weight_method)
    J = sample_weights(p, sim, J_rng)
    ens = simulate(p, sim, J, dyn_rng)
    k_max = min(law.d if plan.k_max is None else plan.k_max, n)
    return distance_report(empirical_stats(ens, p, k_max), law, n, plan.metrics)


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _prepare(plan, p, q, law):
    plan.validate(p.d)
    return solve_limit_law(p, q) if law is None else law


def _collect(report, jobs, results):
    for (n, trial), dists in zip(jobs, results):
        for metric, value in dists.items():
            report.rows.append({"n": n, "trial": trial, "metric": metric, "value": value})


def run_averaged_convergence(plan: ExperimentPlan, p: ModelParams,
                             q: QuadratureConfig = QuadratureConfig(),
                             law: LimitLaw | None = None) -> DistanceReport:
    """Fresh weights for every trial: statistics of the weight-averaged law."""
    law = _prepare(plan, p, q, law)
    jobs = [(n, tr) for n in plan.n_list for tr in range(plan.trials_per_n)]
    results = _map(lambda job: _one_trial(p, law, plan, job[0],
                                          stream(plan.seed, WEIGHTS, *job),
                                          stream(plan.seed, DYNAMICS, *job)),
                   jobs, plan.threads)
    report = DistanceReport("averaged")
    _collect(report, jobs, results)
    _add_trend(report, plan, law)
    return report


def _add_trend(report, plan, law):
    if "mean" not in plan.metrics:
        return
    meds = [report.median("mean_err", n) for n in plan.n_list]
    report.extras["median_mean_err"] = dict(zip(map(str, plan.n_list), meds))
    report.extras["clt_envelope"] = {str(n): clt_envelope(law, n) for n in plan.n_list}
    if len(plan.n_list) >= 2:
        report.extras["loglog_slope"] = loglog_slope(plan.n_list, meds)


def exceedance_fractions(plan: ExperimentPlan, p: ModelParams, law: LimitLaw) -> dict:
    """Fraction of weight draws with ||c_hat - c||_inf > eps, per n.

    Each draw uses its own weights and noise.  When ``plan.exceedance_eps``
    is unset, eps is the median error observed at the smallest n.
    """
    sub = ExperimentPlan(plan.exceedance_n_list, 1, plan.seed, ("mean",), 0, plan.weight_method)
    errs = {}
    for n in plan.exceedance_n_list:
        jobs = range(plan.exceedance_draws)
        res = _map(lambda e: _one_trial(p, law, sub, n, stream(plan.seed, EXCEED_WEIGHTS, n, e),
                                        stream(plan.seed, EXCEED_DYNAMICS, n, e)),
                   jobs, plan.threads)
        errs[n] = np.array([r["mean_err"] for r in res])
    eps = plan.exceedance_eps
    if eps is None:
        eps = float(np.median(errs[plan.exceedance_n_list[0]]))
    return {"eps": eps,
            "fractions": {str(n): float(np.mean(errs[n] > eps)) for n in plan.exceedance_n_list}}


def run_quenched_convergence(plan: ExperimentPlan, p: ModelParams,
                             q: QuadratureConfig = QuadratureConfig(),
                             law: LimitLaw | None = None) -> DistanceReport:
    """One weight matrix per n, reused by every trial; only noise varies."""
    law = _prepare(plan, p, q, law)
    jobs = [(n, tr) for n in plan.n_list for tr in range(plan.trials_per_n)]
    results = _map(lambda job: _one_trial(p, law, plan, job[0],
                                          stream(plan.seed, WEIGHTS, job[0]),
                                          stream(plan.seed, DYNAMICS, *job)),
                   jobs, plan.threads)
    report = DistanceReport("quenched")
    _collect(report, jobs, results)
    _add_trend(report, plan, law)
    if plan.exceedance_n_list:
        report.extras["exceedance"] = exceedance_fractions(plan, p, law)
    return report


# ----------------------------------------------------------------------------
# Ergodic averages along one realization


def limit_expectation(law: LimitLaw, h, m: int, N: int, seed: int,
                      chunk: int = 200_000) -> tuple[float, float]:
    """Monte Carlo estimate of the limit-law expectation of a window functional."""
    total, total_sq, done, i = 0.0, 0.0, 0, 0
    while done < N:
        size = min(chunk, N - done)
        seq = np.random.SeedSequence(int(seed), spawn_key=(LIMIT_MC, i))
        u = sample_limit_law(law, m, size, seq)
        vals = np.asarray(h(u), dtype=float)
        total += vals.sum()
        total_sq += np.square(vals).sum()
        done += size
        i += 1
    mean = total / N
    var = max(total_sq / N - mean * mean, 0.0) * N / (N - 1)
    return float(mean), float(np.sqrt(var / N))


def path_stderr(vals: np.ndarray, max_lag: int) -> float:
    """Standard error of a periodic spatial average with finite-range dependence."""
    N = vals.size
    D = vals - vals.mean()
    acov = [float(np.dot(D, np.roll(D, -k)) / N) for k in range(min(max_lag, N // 2) + 1)]
    lrv = acov[0] + 2.0 * sum(acov[1:])
    return float(np.sqrt(max(lrv, acov[0] / N) / N))


def run_ergodic_path(plan: ExperimentPlan, p: ModelParams, q: QuadratureConfig, h, m: int,
                     law: LimitLaw | None = None) -> DistanceReport:
    """Single-realization shift averages of ``h`` against the limit expectation."""
    law = _prepare(plan, p, q, law)
    ref, ref_se = limit_expectation(law, h, m, plan.mc_samples, plan.seed)
    report = DistanceReport("ergodic", extras={"limit_expectation": ref, "limit_stderr": ref_se,
                                               "window_radius": m})
    for n in plan.n_list:
        sim = SimConfig(n, plan.seed, plan.weight_method)
        J = sample_weights(p, sim, stream(plan.seed, WEIGHTS, n))
        ens = simulate(p, sim, J, stream(plan.seed, DYNAMICS, n))
        vals = np.asarray(h(windows(ens.u, m)), dtype=float)
        emp = empirical_test_function(ens, h, m)
        # windows further apart than 2m + d are independent in the limit
        se = path_stderr(vals, 2 * m + law.d)
        gap = abs(emp - ref)
        combined = float(np.hypot(se, ref_se))
        for metric, value in (("path_average", emp), ("gap", gap), ("path_stderr", se),
                              ("combined_stderr", combined)):
            report.rows.append({"n": n, "trial": 0, "metric": metric, "value": value})
    return report


# ----------------------------------------------------------------------------
# Window functionals addressable by name


def _h_one(u):
    return np.ones(u.shape[0])


def window_functional(name: str, p: ModelParams):
    """Named bounded functionals of a window batch (B, 2m+1, T+1)."""
    f = p.f

    def centre(u):
        return u.shape[1] // 2

    table = {
        "one": _h_one,
        "f_u0_1": lambda u: f(u[:, centre(u), 1]),
        "f_pair_T": lambda u: f(u[:, centre(u), -1]) * f(u[:, centre(u) + 1, -1]),
        "prod_f_T": lambda u: np.prod(f(u[:, :, -1]), axis=1),
    }
    if name not in table:
        raise ParamsError([f"unknown window functional {name!r}"])
    return table[name]


def plan_to_dict(plan: ExperimentPlan) -> dict:
    d = asdict(plan)
    d["metrics"] = list(plan.metrics)
    return d
