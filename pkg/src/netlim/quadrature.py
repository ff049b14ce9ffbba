"""Gauss-Hermite expectations of functions of low-dimensional Gaussians."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureConfig:
    """Node counts and thresholds for the reduced Gaussian integrals.

    ``init_nodes`` is kept for configuration compatibility: Gaussian initial
    laws are folded exactly into the Gaussian block, so no separate rule for
    the time-0 coordinate is ever needed.
    """

    nodes_gh: int = 32
    init_nodes: int = 32
    degenerate_variance_eps: float = 1e-14

    def __post_init__(self):
        if self.nodes_gh < 2 or self.init_nodes < 2:
            raise ValueError("quadrature node counts must be >= 2")

    def to_dict(self) -> dict:
        return {
            "nodes_gh": self.nodes_gh,
            "init_nodes": self.init_nodes,
            "degenerate_variance_eps": self.degenerate_variance_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuadratureConfig":
        return cls(**{k: d[k] for k in ("nodes_gh", "init_nodes", "degenerate_variance_eps") if k in d})


@lru_cache(maxsize=None)
def gh_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for E[g(Z)], Z ~ N(0, 1): sum(w * g(x))."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / np.sqrt(2.0 * np.pi)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _tensor_rule(n: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gh_rule(n)
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, wts


def gaussian_expectation(fn, mean, cov, nodes: int, eps: float = 1e-14) -> float:
    """E[fn(X)] for X ~ N(mean, cov) by whitened tensor Gauss-Hermite.

    ``fn`` maps an (npts, k) array to npts values.  Directions whose variance
    is below ``eps`` are treated as point masses, so a zero covariance
    reduces to a single evaluation at the mean.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    evals, evecs = np.linalg.eigh(cov)
    keep = evals > eps
    L = evecs[:, keep] * np.sqrt(evals[keep])
    z, w = _tensor_rule(nodes, int(keep.sum()))
    pts = mean + z @ L.T
    return float(np.dot(w, fn(pts)))
