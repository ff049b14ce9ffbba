"""Finite-network simulation and shift-averaged empirical statistics.

Neuron j in V_n = {-n..n} is stored at array index j + n.  Index arithmetic
on neurons always wraps modulo 2n+1, so a shift by k in V_n is a roll by k of
the array.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .model import CovFunction, ModelParams, ParamsError, lambda_psd_check, periodize, psi_forward

WEIGHT_METHODS = ("fft-torus", "direct-factorization")
DIRECT_MAX_N = 6

# stream tags used when deriving per-trial generators from a master seed
WEIGHTS, DYNAMICS, EXCEED_WEIGHTS, EXCEED_DYNAMICS, LIMIT_MC = range(5)


def stream(master: int, tag: int, *idx: int) -> np.random.Generator:
    """Independent generator for (master seed, stream tag, indices).

    Built with ``SeedSequence(master, spawn_key=(tag, *idx))``; distinct keys
    give non-overlapping streams and the result does not depend on the order
    in which trials are run.
    """
    return np.random.default_rng(np.random.SeedSequence(int(master), spawn_key=(tag, *map(int, idx))))


@dataclass(frozen=True)
class SimConfig:
    n: int
    seed: int = 0
    weight_method: str = "fft-torus"

    @property
    def size(self) -> int:
        return 2 * self.n + 1

    def problems(self, d: int) -> list[str]:
        out = []
        if self.n < 1:
            out.append("n must be >= 1")
        if self.size <= 2 * d:
            out.append(f"population 2n+1={self.size} must exceed 2d={2 * d}")
        if self.weight_method not in WEIGHT_METHODS:
            out.append(f"unknown weight_method {self.weight_method!r}")
        if self.weight_method == "direct-factorization" and self.n > DIRECT_MAX_N:
            out.append(f"direct-factorization only supported for n <= {DIRECT_MAX_N}")
        return out


@dataclass
class WeightField:
    J: np.ndarray  # J[i + n, j + n]: post i, pre j

    @property
    def n(self) -> int:
        return (self.J.shape[0] - 1) // 2


def weight_covariance_table(lam: CovFunction, size: int) -> np.ndarray:
    """Cov(J_{i+k, j+l}, J_{ij}) on the torus, indexed [k mod N, l mod N]."""
    return periodize(lam, size) / size


def sample_weights(p: ModelParams, sim: SimConfig, rng: np.random.Generator | None = None) -> WeightField:
    """One draw of the synaptic matrix.

    Mean j_bar/N, covariance Lambda/N with N = 2n+1, stationary on the torus.
    """
    problems = sim.problems(p.d)
    if problems:
        raise ParamsError(problems)
    N = sim.size
    chk = lambda_psd_check(p.lambda_, N)
    if not chk.passed:
        raise ParamsError([f"Λ spectrally invalid on torus {N} (min {chk.min_value:.3g})"])
    rng = stream(sim.seed, WEIGHTS) if rng is None else rng
    mean = p.j_bar / N
    if not np.any(p.lambda_.values):
        return WeightField(np.full((N, N), mean))
    C = weight_covariance_table(p.lambda_, N)
    if sim.weight_method == "fft-torus":
        S = np.clip(np.fft.fft2(C).real, 0.0, None)
        W = rng.standard_normal((N, N))
        X = np.fft.ifft2(np.sqrt(S) * np.fft.fft2(W)).real
    else:
        L = _direct_factor(C.tobytes(), N)
        X = (L @ rng.standard_normal(N * N)).reshape(N, N)
    return WeightField(mean + X)


@lru_cache(maxsize=8)
def _direct_factor(table: bytes, N: int) -> np.ndarray:
    C = np.frombuffer(table).reshape(N, N)
    a = np.arange(N)
    da = (a[:, None] - a[None, :]) % N
    # full N^2 x N^2 block-circulant covariance, row-major (i, j) flattening
    full = C[da[:, None, :, None], da[None, :, None, :]].reshape(N * N, N * N)
    evals, evecs = np.linalg.eigh(full)
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


@dataclass
class TrajectoryEnsemble:
    u: np.ndarray  # (2n+1, T+1)
    seed: int | None = None
    weights_seed: int | None = None
    theta: np.ndarray | None = field(default=None, repr=False)
    noise: np.ndarray | None = field(default=None, repr=False)  # (2n+1, T), noise[:, t-1] = B_{t-1}

    @property
    def n(self) -> int:
        return (self.u.shape[0] - 1) // 2

    @property
    def T(self) -> int:
        return self.u.shape[1] - 1


def simulate(p: ModelParams, sim: SimConfig, J: WeightField,
             rng: np.random.Generator | None = None) -> TrajectoryEnsemble:
    """Run the network recursion for t = 1..T with a fixed weight matrix."""
    N, T = sim.size, p.horizon_T
    if J.J.shape != (N, N):
        raise ValueError(f"weight matrix shape {J.J.shape} != ({N}, {N})")
    rng = stream(sim.seed, DYNAMICS) if rng is None else rng
    u = np.empty((N, T + 1))
    u[:, 0] = p.mu_init.sample(rng, N)
    theta = p.theta_bar + np.sqrt(p.theta2) * rng.standard_normal(N)
    B = np.sqrt(p.sigma2) * rng.standard_normal((N, T))
    for t in range(1, T + 1):
        u[:, t] = p.gamma * u[:, t - 1] + J.J @ p.f(u[:, t - 1]) + theta + B[:, t - 1]
    return TrajectoryEnsemble(u, sim.seed, None, theta, B)


# ----------------------------------------------------------------------------
# Empirical statistics


@dataclass
class EmpiricalStats:
    c_hat: np.ndarray  # (T,)
    K_hat: np.ndarray  # (k_max+1, T, T); lag 0 includes the sigma2 diagonal
    v: np.ndarray = field(repr=False)  # (2n+1, T+1) marginal pools, column s = time s
    n: int = 0

    @property
    def T(self) -> int:
        return self.c_hat.size

    def to_dict(self) -> dict:
        return {
            "version": "empstats-v1",
            "n": self.n,
            "horizon_T": self.T,
            "c": self.c_hat.tolist(),
            "K": [{"lag": k, "matrix": self.K_hat[k].tolist()} for k in range(self.K_hat.shape[0])],
        }


def lag_covariances(x: np.ndarray, k_max: int) -> np.ndarray:
    """out[k] = (1/N) sum_j (x_j - xbar)^T (x_{(j+k) mod N} - xbar), x of shape (N, T)."""
    N = x.shape[0]
    D = x - x.mean(axis=0)
    return np.stack([D.T @ np.roll(D, -k, axis=0) / N for k in range(k_max + 1)])


def empirical_stats(ens: TrajectoryEnsemble, p: ModelParams, k_max: int) -> EmpiricalStats:
    if not 0 <= k_max <= ens.n:
        raise ValueError(f"k_max={k_max} out of range 0..{ens.n}")
    v = psi_forward(ens.u, p.gamma, p.theta_bar)
    return EmpiricalStats(v[:, 1:].mean(axis=0), lag_covariances(v[:, 1:], k_max), v, ens.n)


def windows(u: np.ndarray, m: int) -> np.ndarray:
    """All 2n+1 periodic windows: out[a, i] = u[(a + i - m) mod N], i = 0..2m."""
    N = u.shape[0]
    idx = (np.arange(N)[:, None] + np.arange(-m, m + 1)[None, :]) % N
    return u[idx]


def empirical_test_function(ens: TrajectoryEnsemble, h, m: int) -> float:
    """Shift average (1/N) sum_j h(window of radius m around neuron j).

    ``h`` maps a batch of windows (B, 2m+1, T+1) to B values.
    """
    if m > ens.n:
        raise ValueError("window radius exceeds network size")
    return float(np.mean(h(windows(ens.u, m))))


# ----------------------------------------------------------------------------
# Persistence

MAGIC = b"NSIM"
BIN_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, n, T -> 16 bytes


def ensembles_to_csv(ensembles: list[TrajectoryEnsemble]) -> str:
    buf = io.StringIO()
    buf.write("trial,neuron,time,u\n")
    for trial, ens in enumerate(ensembles):
        n = ens.n
        for a in range(ens.u.shape[0]):
            for t in range(ens.T + 1):
                buf.write(f"{trial},{a - n},{t},{float(ens.u[a, t])!r}\n")
    return buf.getvalue()


def ensembles_from_csv(text: str) -> list[np.ndarray]:
    data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    out = []
    for trial in np.unique(data[:, 0]).astype(int):
        rows = data[data[:, 0] == trial]
        n, T = int(rows[:, 1].max()), int(rows[:, 2].max())
        u = np.empty((2 * n + 1, T + 1))
        u[rows[:, 1].astype(int) + n, rows[:, 2].astype(int)] = rows[:, 3]
        out.append(u)
    return out


def ensembles_to_bytes(ensembles: list[TrajectoryEnsemble]) -> bytes:
    n, T = ensembles[0].n, ensembles[0].T
    parts = [_HEADER.pack(MAGIC, BIN_VERSION, n, T)]
    for ens in ensembles:
        if (ens.n, ens.T) != (n, T):
            raise ValueError("all ensembles in one file must share n and T")
        parts.append(np.ascontiguousarray(ens.u, dtype="<f8").tobytes())
    return b"".join(parts)


def ensembles_from_bytes(blob: bytes) -> list[np.ndarray]:
    magic, version, n, T = _HEADER.unpack_from(blob)
    if magic != MAGIC or version != BIN_VERSION:
        raise ValueError("not an NSIM v1 file")
    data = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    per = (2 * n + 1) * (T + 1)
    if data.size % per:
        raise ValueError("truncated NSIM payload")
    return [a.reshape(2 * n + 1, T + 1).copy() for a in np.split(data, data.size // per)]


def stats_to_json(stats: EmpiricalStats) -> str:
    return json.dumps(stats.to_dict(), indent=1)
