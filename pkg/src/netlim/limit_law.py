"""Time-inductive computation of the mean-field limit law.

The limit law is represented in v-coordinates.  Its time-0 coordinates are
i.i.d. with the initial law; the block of times 1..T is a stationary Gaussian
field over neuron indices with

    mean        c_s                               (same for every neuron)
    covariance  Cov(v^0_r, v^l_s) = sigma2 [l=0] [r=s] + K^l_{rs}

where K^k_{rs} = theta2 [k=0] + sum_l Lambda(k, l) M^l_{rs} and the moment
blocks are M^l_{rs} = E[f(u^0_{r-1}) f(u^l_{s-1})].  Every entry with time
index t only involves marginals up to time t-1, which is what makes the
construction inductive in t.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import InitialLaw, ModelParams, psi_inverse, psi_inverse_coeffs, validate_params
from .quadrature import QuadratureConfig, gaussian_expectation

FORMAT_VERSION = "limitlaw-v1"

# eigenvalues in [-CLIP_TOL, 0) are roundoff and get clipped; below is a bug
CLIP_TOL = 1e-10
WINDOW_PSD_TOL = 1e-8


class NumericalError(ArithmeticError):
    """A covariance that should be PSD is not, beyond roundoff."""


@dataclass
class LimitLaw:
    params: ModelParams
    c: np.ndarray  # (T,), c[s-1] = c_s
    K: np.ndarray  # (d+1, T, T), K[l] = K^l for l = 0..d
    M: np.ndarray  # (L_M+1, T, T), M[l] = M^l for l = 0..L_M
    filled: int = 0  # number of completed induction steps

    @classmethod
    def empty(cls, p: ModelParams) -> "LimitLaw":
        T, d, L = p.horizon_T, p.d, p.lambda_.lag_support
        return cls(p, np.zeros(T), np.zeros((d + 1, T, T)), np.zeros((L + 1, T, T)))

    @property
    def T(self) -> int:
        return self.params.horizon_T

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def L_M(self) -> int:
        return self.M.shape[0] - 1

    @property
    def sigma2(self) -> float:
        return self.params.sigma2

    @property
    def mu_init(self) -> InitialLaw:
        return self.params.mu_init

    def K_lag(self, l: int) -> np.ndarray:
        """K^l for any integer lag; K^{-l} = (K^l)^T and zero beyond d."""
        if abs(l) > self.d:
            return np.zeros((self.T, self.T))
        return self.K[l] if l >= 0 else self.K[-l].T

    def M_lag(self, l: int) -> np.ndarray:
        if abs(l) > self.L_M:
            raise KeyError(f"moment block for lag {l} is not stored (L_M = {self.L_M})")
        return self.M[l] if l >= 0 else self.M[-l].T

    def copy(self) -> "LimitLaw":
        return LimitLaw(self.params, self.c.copy(), self.K.copy(), self.M.copy(), self.filled)

    # -- persistence -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "horizon_T": self.T,
            "d": self.d,
            "sigma2": self.sigma2,
            "mu_init": self.mu_init.to_dict(),
            "c": self.c.tolist(),
            "K": [{"lag": l, "matrix": self.K[l].tolist()} for l in range(self.d + 1)],
            "M": [{"lag": l, "matrix": self.M[l].tolist()} for l in range(self.L_M + 1)],
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LimitLaw":
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported limit-law version {doc.get('version')!r}")
        p = ModelParams.from_dict(doc["params"])
        law = cls.empty(p)
        law.c[:] = doc["c"]
        for rec in doc["K"]:
            law.K[rec["lag"]] = np.asarray(rec["matrix"])
        for rec in doc["M"]:
            law.M[rec["lag"]] = np.asarray(rec["matrix"])
        law.filled = p.horizon_T
        return law

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "LimitLaw":
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------------
# Marginals


@dataclass
class GaussianMarginal:
    """Law of v-coordinates for a group of neurons.

    Neuron ``i`` contributes ``sizes[i]`` Gaussian coordinates (times
    1..sizes[i]) and one time-0 coordinate drawn i.i.d. from ``mu_init``.
    ``mean``/``cov`` describe the concatenated Gaussian coordinates.
    """

    mean: np.ndarray
    cov: np.ndarray
    mu_init: InitialLaw
    sizes: tuple[int, ...] = field(default=(1,))
    _factor: np.ndarray | None = field(default=None, repr=False)

    def factor(self) -> np.ndarray:
        if self._factor is None:
            evals, evecs = np.linalg.eigh(self.cov)
            self._factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
        return self._factor

    def sample_v(self, N: int, rng: np.random.Generator) -> list[np.ndarray]:
        """Draw N samples; returns one (N, sizes[i]+1) array per neuron."""
        n_gauss = self.mean.size
        g = self.mean + rng.standard_normal((N, n_gauss)) @ self.factor().T if n_gauss else np.zeros((N, 0))
        out, start = [], 0
        for size in self.sizes:
            v = np.empty((N, size + 1))
            v[:, 0] = self.mu_init.sample(rng, N)
            v[:, 1:] = g[:, start:start + size]
            start += size
            out.append(v)
        return out


def regularize_cov(cov: np.ndarray, tol: float = CLIP_TOL) -> np.ndarray:
    """Symmetrize and clip roundoff-negative eigenvalues; fail below -tol."""
    cov = 0.5 * (cov + cov.T)
    if cov.size == 0:
        return cov
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] < -tol:
        raise NumericalError(f"covariance not PSD: min eigenvalue {evals[0]:.3e}")
    if evals[0] < 0:
        cov = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
    return cov


def single_marginal(law: LimitLaw, t: int) -> GaussianMarginal:
    """Law of one neuron's v_0..v_t: mu_I x N(c_{1..t}, sigma2 Id + K^0)."""
    if not 0 <= t <= law.T:
        raise ValueError(f"time {t} out of range 0..{law.T}")
    cov = law.sigma2 * np.eye(t) + law.K[0][:t, :t]
    return GaussianMarginal(law.c[:t].copy(), regularize_cov(cov), law.mu_init, (t,))


def pair_marginal(law: LimitLaw, l: int, t: int, s: int) -> GaussianMarginal:
    """Joint law of (v^0_{0..t}, v^l_{0..s}) for a lag l != 0."""
    if l == 0:
        raise ValueError("pair marginal needs a nonzero lag")
    K0, Kl = law.K[0], law.K_lag(l)
    cov = np.block([
        [law.sigma2 * np.eye(t) + K0[:t, :t], Kl[:t, :s]],
        [Kl[:t, :s].T, law.sigma2 * np.eye(s) + K0[:s, :s]],
    ])
    mean = np.concatenate([law.c[:t], law.c[:s]])
    return GaussianMarginal(mean, regularize_cov(cov), law.mu_init, (t, s))


# ----------------------------------------------------------------------------
# Reduced one/two-dimensional integrals


def _reduced(law: LimitLaw, t: int) -> tuple[np.ndarray, float, float]:
    """Coefficients of u_t = g0 * v_0 + a . v_{1..t} + b."""
    p = law.params
    a, b = psi_inverse_coeffs(t, p.gamma, p.theta_bar)
    return a[1:], float(a[0]), b


def _sum_over_init(mu: InitialLaw, fn) -> float:
    return float(sum(w * fn(x0) for x0, w in zip(mu.atoms, mu.weights) if w > 0))


def mean_entry(law: LimitLaw, s: int, q: QuadratureConfig = QuadratureConfig()) -> float:
    """c_s = j_bar E[f(u_{s-1})] under the single-neuron marginal up to s-1."""
    p = law.params
    if p.j_bar == 0.0:
        return 0.0
    a, g0, b = _reduced(law, s - 1)
    t = s - 1
    Sigma = law.sigma2 * np.eye(t) + law.K[0][:t, :t]
    mu = p.mu_init
    var = float(a @ Sigma @ a) + g0 * g0 * mu.var
    if var < -CLIP_TOL:
        raise NumericalError(f"negative reduced variance {var:.3e} for c_{s}")
    var = max(var, 0.0)
    m = float(a @ law.c[:t]) + b

    def inner(x0):
        return gaussian_expectation(lambda x: p.f(x[:, 0]), [m + g0 * x0], [[var]],
                                    q.nodes_gh, q.degenerate_variance_eps)

    return p.j_bar * _sum_over_init(mu, inner)


def _pair_expect(f, mean, cov, q: QuadratureConfig) -> float:
    if cov[0, 0] < -CLIP_TOL or cov[1, 1] < -CLIP_TOL:
        raise NumericalError("negative reduced variance")
    return gaussian_expectation(lambda x: f(x[:, 0]) * f(x[:, 1]), mean, cov,
                                q.nodes_gh, q.degenerate_variance_eps)


def moment_same(law: LimitLaw, r: int, s: int, q: QuadratureConfig = QuadratureConfig()) -> float:
    """M^0_{rs} = E[f(u_{r-1}) f(u_{s-1})] for one neuron."""
    p = law.params
    ar, gr, br = _reduced(law, r - 1)
    as_, gs, bs = _reduced(law, s - 1)
    tp = max(r, s) - 1
    Sigma = law.sigma2 * np.eye(tp) + law.K[0][:tp, :tp]
    A = np.zeros((2, tp))
    A[0, : r - 1], A[1, : s - 1] = ar, as_
    g = np.array([gr, gs])
    mu = p.mu_init
    cov = A @ Sigma @ A.T + np.outer(g, g) * mu.var
    base = A @ law.c[:tp] + np.array([br, bs])
    return _sum_over_init(mu, lambda x0: _pair_expect(p.f, base + g * x0, cov, q))


def moment_cross(law: LimitLaw, l: int, r: int, s: int,
                 q: QuadratureConfig = QuadratureConfig()) -> float:
    """M^l_{rs} = E[f(u^0_{r-1}) f(u^l_{s-1})] for two neurons at lag l != 0."""
    if l == 0:
        return moment_same(law, r, s, q)
    p = law.params
    ar, gr, br = _reduced(law, r - 1)
    as_, gs, bs = _reduced(law, s - 1)
    tr, ts = r - 1, s - 1
    S0 = law.sigma2 * np.eye(max(tr, ts)) + law.K[0][: max(tr, ts), : max(tr, ts)]
    Kl = law.K_lag(l)[:tr, :ts]
    mu = p.mu_init
    cov = np.array([
        [ar @ S0[:tr, :tr] @ ar + gr * gr * mu.var, ar @ Kl @ as_],
        [as_ @ Kl.T @ ar, as_ @ S0[:ts, :ts] @ as_ + gs * gs * mu.var],
    ])
    base = np.array([ar @ law.c[:tr] + br, as_ @ law.c[:ts] + bs])
    g = np.array([gr, gs])

    def outer(x0):
        return _sum_over_init(mu, lambda y0: _pair_expect(p.f, base + g * np.array([x0, y0]), cov, q))

    return _sum_over_init(mu, outer)


def assemble_K(M_lag, lam, theta2: float, k: int, r: int, s: int) -> float:
    """K^k_{rs} = theta2 [k=0] + sum_l Lambda(k, l) M^l_{rs}.

    ``M_lag`` maps a lag to its T x T moment block (negative lags allowed).
    """
    if abs(k) > lam.d:
        return 0.0
    out = theta2 if k == 0 else 0.0
    for l in range(-lam.d, lam.d + 1):
        w = lam(k, l)
        if w != 0.0:
            out += w * M_lag(l)[r - 1, s - 1]
    return out


# ----------------------------------------------------------------------------
# Induction


def _step_pairs(t: int):
    """All (r, s) in [1, t]^2 with max(r, s) == t."""
    return [(r, t) for r in range(1, t + 1)] + [(t, s) for s in range(1, t)]


def _fill_step(src: LimitLaw, dst: LimitLaw, t: int, q: QuadratureConfig, threads: int):
    """Write the step-t entries of Q^src into dst."""
    p = src.params
    jobs = [("c", 0, t, t)]
    for l in range(dst.L_M + 1):
        for r, s in _step_pairs(t):
            if l == 0 and r > s:
                continue
            jobs.append(("M", l, r, s))

    def run(job):
        kind, l, r, s = job
        if kind == "c":
            return mean_entry(src, t, q)
        return moment_same(src, r, s, q) if l == 0 else moment_cross(src, l, r, s, q)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    for (kind, l, r, s), val in zip(jobs, results):
        if kind == "c":
            dst.c[t - 1] = val
        else:
            dst.M[l, r - 1, s - 1] = val
            if l == 0:
                dst.M[0, s - 1, r - 1] = val

    for k in range(dst.d + 1):
        for r, s in _step_pairs(t):
            dst.K[k, r - 1, s - 1] = assemble_K(dst.M_lag, p.lambda_, p.theta2, k, r, s)
    dst.filled = t


def solve_limit_law(p: ModelParams, q: QuadratureConfig = QuadratureConfig(),
                    threads: int = 1) -> LimitLaw:
    """Compute the limit law one time step at a time."""
    validate_params(p)
    law = LimitLaw.empty(p)
    for t in range(1, p.horizon_T + 1):
        _fill_step(law, law, t, q, threads)
    return law


def apply_Q(nu: LimitLaw, q: QuadratureConfig = QuadratureConfig(), threads: int = 1) -> LimitLaw:
    """Evaluate the self-consistency map on a fully populated law ``nu``.

    The limit law is the unique fixed point of this map.
    """
    out = LimitLaw.empty(nu.params)
    for t in range(1, nu.T + 1):
        _fill_step(nu, out, t, q, threads)
    return out


def law_distance(a: LimitLaw, b: LimitLaw) -> float:
    """Sup-norm distance over c and all K blocks."""
    return float(max(np.max(np.abs(a.c - b.c), initial=0.0), np.max(np.abs(a.K - b.K), initial=0.0)))


# ----------------------------------------------------------------------------
# Monte Carlo oracle


def mc_moment_oracle(law: LimitLaw, lag, r: int, s: int | None = None, N: int = 10**6,
                     seed: int = 0, f=None) -> tuple[float, float]:
    """Brute-force estimate of c_r (``lag="mean"``) or M^lag_{rs}.

    Samples the full (not reduced) marginal, maps each neuron back with
    psi_inverse and averages the f-product.  ``lag`` may be ``"same"`` or 0
    for same-neuron moments.  Returns (estimate, standard error).
    """
    if N < 100:
        raise ValueError("Monte Carlo oracle needs N >= 100 samples")
    p = law.params
    f = p.f if f is None else f
    rng = np.random.default_rng(seed)

    def to_u(v):
        return psi_inverse(v, p.gamma, p.theta_bar)

    if lag == "mean":
        (v,) = single_marginal(law, r - 1).sample_v(N, rng)
        vals = p.j_bar * f(to_u(v)[:, r - 1])
    elif lag == "same" or lag == 0:
        (v,) = single_marginal(law, max(r, s) - 1).sample_v(N, rng)
        u = to_u(v)
        vals = f(u[:, r - 1]) * f(u[:, s - 1])
    else:
        v0, vl = pair_marginal(law, int(lag), r - 1, s - 1).sample_v(N, rng)
        vals = f(to_u(v0)[:, r - 1]) * f(to_u(vl)[:, s - 1])
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (N,))
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(N))


@dataclass(frozen=True)
class OracleRow:
    entry: str
    quadrature: float
    estimate: float
    stderr: float

    @property
    def z(self) -> float:
        diff = self.estimate - self.quadrature
        if self.stderr > 0:
            return diff / self.stderr
        return 0.0 if abs(diff) <= 1e-12 else float("inf")


def oracle_table(law: LimitLaw, N: int = 10**6, seed: int = 0) -> list[OracleRow]:
    """Compare every c_s and M^l_{rs} (l in [-L_M, L_M]) with Monte Carlo.

    One sample set per marginal: the single-neuron marginal up to T-1 and
    one pair marginal up to (T-1, T-1) per nonzero lag, each drawn with an
    independent stream.  Negative lags are sampled from their own pair
    marginal rather than inferred from the stored positive-lag blocks.
    """
    if N < 100:
        raise ValueError("Monte Carlo oracle needs N >= 100 samples")
    p, T = law.params, law.T
    streams = np.random.SeedSequence(seed).spawn(2 * law.L_M + 1)
    rows = []

    def to_fu(v):
        return p.f(psi_inverse(v, p.gamma, p.theta_bar))

    def stat(x):
        return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))

    (v,) = single_marginal(law, T - 1).sample_v(N, np.random.default_rng(streams[0]))
    fu = to_fu(v)
    for s in range(1, T + 1):
        rows.append(OracleRow(f"c[{s}]", law.c[s - 1], *stat(p.j_bar * fu[:, s - 1])))
    for r in range(1, T + 1):
        for s in range(r, T + 1):
            rows.append(OracleRow(f"M0[{r},{s}]", law.M[0, r - 1, s - 1],
                                  *stat(fu[:, r - 1] * fu[:, s - 1])))
    lags = [l for l in range(1, law.L_M + 1)] + [-l for l in range(1, law.L_M + 1)]
    for stream, l in zip(streams[1:], lags):
        v0, vl = pair_marginal(law, l, T - 1, T - 1).sample_v(N, np.random.default_rng(stream))
        f0, fl = to_fu(v0), to_fu(vl)
        Ml = law.M_lag(l)
        for r in range(1, T + 1):
            for s in range(1, T + 1):
                rows.append(OracleRow(f"M{l}[{r},{s}]", Ml[r - 1, s - 1],
                                      *stat(f0[:, r - 1] * fl[:, s - 1])))
    return rows


# ----------------------------------------------------------------------------
# Finite windows


def window_covariance(law: LimitLaw, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of v-coordinates (times 1..T) of neurons -m..m.

    Neuron-major ordering: entry (j + m) * T + (s - 1) is v^j_s.
    """
    T, n = law.T, 2 * m + 1
    cov = np.zeros((n * T, n * T))
    for a in range(n):
        for b in range(n):
            blk = law.K_lag(b - a)
            if a == b:
                blk = blk + law.sigma2 * np.eye(T)
            cov[a * T:(a + 1) * T, b * T:(b + 1) * T] = blk
    cov = 0.5 * (cov + cov.T)
    lo = float(np.linalg.eigvalsh(cov)[0])
    if lo < -WINDOW_PSD_TOL:
        raise NumericalError(f"window covariance not PSD: min eigenvalue {lo:.3e}")
    return np.tile(law.c, n), cov


def window_marginal(law: LimitLaw, m: int) -> GaussianMarginal:
    mean, cov = window_covariance(law, m)
    return GaussianMarginal(mean, cov, law.mu_init, (law.T,) * (2 * m + 1))


def sample_limit_law(law: LimitLaw, m: int, N: int, seed: int) -> np.ndarray:
    """Exact samples of u-trajectories on the window -m..m.

    Returns an array of shape (N, 2m+1, T+1).
    """
    p = law.params
    vs = window_marginal(law, m).sample_v(N, np.random.default_rng(seed))
    v = np.stack(vs, axis=1)
    return psi_inverse(v, p.gamma, p.theta_bar)
