"""Model parameters, the affine change of coordinates and their validation.

A trajectory ``u`` of one neuron lives in R^{T+1}.  Its *v-coordinates* are

    v_0 = u_0,    v_s = u_s - gamma * u_{s-1} - theta_bar   (s = 1..T)

so that for the network dynamics v_s is exactly the synaptic input plus
noise received at step s.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ParamsError(ValueError):
    """Raised when model parameters violate one or more invariants.

    ``problems`` lists every violated invariant, not only the first one.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# ----------------------------------------------------------------------------
# Building blocks

_TINY = np.finfo(float).tiny
_ONE_MINUS = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class SigmoidSpec:
    """Logistic gain function x -> 1 / (1 + exp(-g x))."""

    family: str = "logistic"
    g: float = 1.0

    def __call__(self, x):
        from scipy.special import expit

        # keep the float result inside the open interval (0, 1); the clip moves
        # values by at most 1.1e-16
        return np.clip(expit(self.g * np.asarray(x, dtype=float)), _TINY, _ONE_MINUS)

    @property
    def lipschitz(self) -> float:
        return self.g / 4.0

    def problems(self) -> list[str]:
        out = []
        if self.family != "logistic":
            out.append(f"unknown sigmoid family {self.family!r}")
        if not self.g > 0:
            out.append("sigmoid slope g must be > 0")
        return out

    def to_dict(self) -> dict:
        return {"family": self.family, "g": self.g}

    @classmethod
    def from_dict(cls, d: dict) -> "SigmoidSpec":
        return cls(family=d.get("family", "logistic"), g=float(d["g"]))


@dataclass(frozen=True)
class InitialLaw:
    """Law of u_0: a point mass, a Gaussian, or a finite discrete measure.

    Internally every variant is a list of atoms with weights plus an extra
    Gaussian variance ``var`` around each atom (only nonzero for the
    Gaussian variant).  Quadrature code relies on this representation.
    """

    kind: str = "point"
    atoms: tuple[float, ...] = (0.0,)
    weights: tuple[float, ...] = (1.0,)
    var: float = 0.0

    @classmethod
    def point(cls, u0: float = 0.0) -> "InitialLaw":
        return cls("point", (float(u0),), (1.0,), 0.0)

    @classmethod
    def gaussian(cls, m0: float, s0sq: float) -> "InitialLaw":
        return cls("gaussian", (float(m0),), (1.0,), float(s0sq))

    @classmethod
    def discrete(cls, atoms: Sequence[float], weights: Sequence[float]) -> "InitialLaw":
        return cls("discrete", tuple(map(float, atoms)), tuple(map(float, weights)), 0.0)

    def problems(self) -> list[str]:
        out = []
        if self.kind not in ("point", "gaussian", "discrete"):
            out.append(f"unknown initial law kind {self.kind!r}")
        if len(self.atoms) != len(self.weights) or not self.atoms:
            out.append("initial law atoms/weights length mismatch")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0):
            out.append("initial law weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            out.append("initial law weights must sum to 1")
        if self.var < 0:
            out.append("initial law variance must be >= 0")
        return out

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "discrete":
            idx = rng.choice(len(self.atoms), size=size, p=np.asarray(self.weights))
            return np.asarray(self.atoms)[idx]
        x = np.full(size, self.atoms[0])
        if self.var > 0:
            x = x + np.sqrt(self.var) * rng.standard_normal(size)
        return x

    def to_dict(self) -> dict:
        if self.kind == "point":
            return {"kind": "point", "u0": self.atoms[0]}
        if self.kind == "gaussian":
            return {"kind": "gaussian", "m0": self.atoms[0], "s0sq": self.var}
        return {"kind": "discrete", "atoms": list(self.atoms), "weights": list(self.weights)}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialLaw":
        kind = d["kind"]
        if kind == "point":
            return cls.point(d["u0"])
        if kind == "gaussian":
            return cls.gaussian(d["m0"], d["s0sq"])
        if kind == "discrete":
            return cls.discrete(d["atoms"], d["weights"])
        raise ParamsError([f"unknown initial law kind {kind!r}"])


@dataclass(frozen=True, eq=False)
class CovFunction:
    """Finite-support covariance Lambda(k, l) of the synaptic weight field.

    ``values[k + d, l + d]`` holds Lambda(k, l) for k, l in [-d, d]; the
    first index is the postsynaptic lag.
    """

    d: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.array(self.values, dtype=float))

    @classmethod
    def zero(cls, d: int = 0) -> "CovFunction":
        return cls(d, np.zeros((2 * d + 1, 2 * d + 1)))

    @classmethod
    def separable(cls, lam: Sequence[float]) -> "CovFunction":
        """Lambda(k, l) = lam(k) lam(l) with ``lam`` given on lags -d..d."""
        lam = np.asarray(lam, dtype=float)
        if lam.size % 2 != 1:
            raise ParamsError(["separable profile needs an odd number of lags"])
        return cls(lam.size // 2, np.outer(lam, lam))

    def __call__(self, k: int, l: int) -> float:
        if abs(k) > self.d or abs(l) > self.d:
            return 0.0
        return float(self.values[k + self.d, l + self.d])

    def __eq__(self, other):
        return (
            isinstance(other, CovFunction)
            and self.d == other.d
            and np.array_equal(self.values, other.values)
        )

    @property
    def lag_support(self) -> int:
        """Largest |l| such that Lambda(k, l) != 0 for some k (0 if none)."""
        cols = np.nonzero(np.any(self.values != 0.0, axis=0))[0]
        if cols.size == 0:
            return 0
        return int(np.max(np.abs(cols - self.d)))

    def problems(self, symmetry_tol: float = 1e-12) -> list[str]:
        out = []
        if self.d < 0:
            out.append("correlation distance d must be >= 0")
            return out
        if self.values.shape != (2 * self.d + 1, 2 * self.d + 1):
            out.append("Λ table shape must be (2d+1, 2d+1)")
            return out
        if not np.all(np.isfinite(self.values)):
            out.append("Λ has non-finite entries")
        if np.max(np.abs(self.values - self.values[::-1, ::-1])) > symmetry_tol:
            out.append("Λ point-symmetry violated")
        return out

    def to_dict(self) -> dict:
        return {"d": self.d, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CovFunction":
        vals = np.asarray(d["values"], dtype=float)
        dd = int(d["d"])
        # flat row-major storage is accepted as well
        if vals.ndim == 1:
            vals = vals.reshape(2 * dd + 1, 2 * dd + 1)
        return cls(dd, vals)


# ----------------------------------------------------------------------------
# Spectral validity of Lambda


@dataclass(frozen=True)
class PSDCheck:
    passed: bool
    min_value: float
    spectrum: np.ndarray = field(repr=False)


def periodize(lam: CovFunction, torus_size: int) -> np.ndarray:
    """Place Lambda on an N x N torus: out[k mod N, l mod N] = Lambda(k, l)."""
    n = int(torus_size)
    if n <= 2 * lam.d:
        raise ParamsError([f"torus size {n} too small for correlation distance d={lam.d}"])
    out = np.zeros((n, n))
    ks = np.arange(-lam.d, lam.d + 1) % n
    out[np.ix_(ks, ks)] = lam.values
    return out


def lambda_psd_check(lam: CovFunction, torus_size: int, tol: float = 1e-10) -> PSDCheck:
    """Check that the periodized Lambda is a valid covariance on the torus.

    The eigenvalues of a block-circulant covariance are the 2D DFT of its
    generating table; the check passes iff they are all >= -tol.
    """
    n = int(torus_size)
    if n % 2 != 1:
        raise ParamsError(["torus size must be odd"])
    spec = np.fft.fft2(periodize(lam, n))
    # imaginary parts cancel for a point-symmetric table
    lo = float(spec.real.min())
    return PSDCheck(lo >= -tol, lo, spec.real)


# ----------------------------------------------------------------------------
# Full parameter set


@dataclass(frozen=True)
class ModelParams:
    gamma: float
    sigma2: float
    theta_bar: float
    theta2: float
    j_bar: float
    lambda_: CovFunction
    f: SigmoidSpec = SigmoidSpec()
    mu_init: InitialLaw = InitialLaw()
    horizon_T: int = 1

    @property
    def T(self) -> int:
        return self.horizon_T

    @property
    def d(self) -> int:
        return self.lambda_.d

    def problems(self) -> list[str]:
        out = []
        if not 0.0 <= self.gamma < 1.0:
            out.append("gamma out of [0,1)")
        if not self.sigma2 > 0:
            out.append("sigma2 must be > 0")
        if not self.theta2 >= 0:
            out.append("theta2 must be >= 0")
        if not (isinstance(self.horizon_T, (int, np.integer)) and self.horizon_T >= 1):
            out.append("horizon_T must be an integer >= 1")
        for x, name in ((self.theta_bar, "theta_bar"), (self.j_bar, "j_bar")):
            if not np.isfinite(x):
                out.append(f"{name} must be finite")
        lam_problems = self.lambda_.problems()
        out += lam_problems
        if not lam_problems:
            # a fine torus approximates the continuous spectrum on [-pi, pi]^2
            chk = lambda_psd_check(self.lambda_, max(4 * self.lambda_.d + 3, 101))
            if not chk.passed:
                out.append(f"Λ spectrally invalid (min spectral value {chk.min_value:.3g})")
        out += self.f.problems()
        out += self.mu_init.problems()
        return out

    def with_(self, **changes) -> "ModelParams":
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "sigma2": self.sigma2,
            "theta_bar": self.theta_bar,
            "theta2": self.theta2,
            "j_bar": self.j_bar,
            "lambda": self.lambda_.to_dict(),
            "f": self.f.to_dict(),
            "mu_init": self.mu_init.to_dict(),
            "horizon_T": self.horizon_T,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        required = ["gamma", "sigma2", "theta_bar", "theta2", "j_bar", "lambda", "f",
                    "mu_init", "horizon_T"]
        missing = [k for k in required if k not in d]
        if missing:
            raise ParamsError([f"missing field {k!r}" for k in missing])
        return cls(
            gamma=float(d["gamma"]),
            sigma2=float(d["sigma2"]),
            theta_bar=float(d["theta_bar"]),
            theta2=float(d["theta2"]),
            j_bar=float(d["j_bar"]),
            lambda_=CovFunction.from_dict(d["lambda"]),
            f=SigmoidSpec.from_dict(d["f"]),
            mu_init=InitialLaw.from_dict(d["mu_init"]),
            horizon_T=int(d["horizon_T"]),
        )


def validate_params(p: ModelParams) -> ModelParams:
    """Return ``p`` unchanged, or raise ParamsError naming every violation."""
    problems = p.problems()
    if problems:
        raise ParamsError(problems)
    return p


# ----------------------------------------------------------------------------
# Coordinate change


_EXT = np.longdouble


def _check_len(x, expected):
    if expected is not None and x.shape[-1] != expected:
        raise ValueError(f"trajectory length {x.shape[-1]} != T+1 = {expected}")


def psi_forward(u, gamma: float, theta_bar: float, T: int | None = None) -> np.ndarray:
    """Map trajectories u (last axis = time) to v-coordinates."""
    u = np.asarray(u, dtype=float)
    _check_len(u, None if T is None else T + 1)
    # extended precision keeps the round trip at a few ulp of max|u|
    x = u.astype(_EXT)
    v = x.copy()
    v[..., 1:] = x[..., 1:] - _EXT(gamma) * x[..., :-1] - _EXT(theta_bar)
    return v.astype(float)


def psi_inverse(v, gamma: float, theta_bar: float, T: int | None = None) -> np.ndarray:
    """Inverse of :func:`psi_forward`, via the closed-form geometric sums.

    u_t = sum_{i<=t} gamma^i v_{t-i} + theta_bar (gamma^t - 1)/(gamma - 1).
    """
    v = np.asarray(v, dtype=float)
    _check_len(v, None if T is None else T + 1)
    n = v.shape[-1]
    g, tb = _EXT(gamma), _EXT(theta_bar)
    A = np.zeros((n, n), dtype=_EXT)
    b = np.zeros(n, dtype=_EXT)
    for t in range(n):
        A[t, : t + 1] = g ** np.arange(t, -1, -1)
        b[t] = 0 if t == 0 else tb * (g**t - 1) / (g - 1)
    return (v.astype(_EXT) @ A.T + b).astype(float)


def psi_inverse_coeffs(t: int, gamma: float, theta_bar: float) -> tuple[np.ndarray, float]:
    """Weights a_0..a_t and offset b with psi_inverse(v)_t = a . v_{0..t} + b."""
    if t < 0:
        raise ValueError("time index must be >= 0")
    # 0.0 ** 0 == 1, so gamma = 0 needs no special case
    a = float(gamma) ** np.arange(t, -1, -1, dtype=float)
    b = 0.0 if t == 0 else theta_bar * (gamma**t - 1.0) / (gamma - 1.0)
    return a, b
