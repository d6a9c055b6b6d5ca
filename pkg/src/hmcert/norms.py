"""Weighted norms and metrics built on the weight w(x) = 1 + beta V(x).

Production code measures distances between measures with :func:`rho_beta`;
:func:`sigma_beta_dual_oracle` solves the defining linear program and exists
so tests can confirm the two agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import tolerances as tol
from ._piecewise import minimize_max_affine
from .errors import DimensionMismatch, ParameterOutOfRange

# Cap on the number of (x, y, column) entries materialised at once in batched
# oscillation computations.
_BATCH_BUDGET = 20_000_000


@dataclass(frozen=True)
class WeightParam:
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ParameterOutOfRange(f"beta must be positive, got {self.beta!r}")

    def __float__(self):
        return float(self.beta)


def _b(beta) -> float:
    b = float(beta)
    if not (np.isfinite(b) and b > 0):
        raise ParameterOutOfRange(f"beta must be positive, got {beta!r}")
    return b


def weight(V, beta) -> np.ndarray:
    return 1.0 + _b(beta) * np.asarray(V, dtype=float)


def _pair(phi, V):
    p = np.asarray(phi, dtype=float)
    v = np.asarray(V, dtype=float)
    if p.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"function has {p.shape[0]} entries, V has {v.shape[0]}")
    return p, v


def sup_norm_beta(phi, V, beta) -> float:
    p, v = _pair(phi, V)
    return float(np.max(np.abs(p) / weight(v, beta)))


def d_beta(x: int, y: int, V, beta) -> float:
    if x == y:
        return 0.0
    v = np.asarray(V, dtype=float)
    b = _b(beta)
    return 2.0 + b * v[x] + b * v[y]


def pair_metric(V, beta) -> np.ndarray:
    """Full matrix of d_beta(x, y)."""
    w = weight(V, beta)
    D = w[:, None] + w[None, :]
    np.fill_diagonal(D, 0.0)
    return D


def osc_seminorm(phi, V, beta, witness: bool = False):
    """max over x != y of |phi(x) - phi(y)| / d_beta(x, y).

    With ``witness=True`` returns (value, (x, y)) where (x, y) is the first
    maximising pair in row-major order.
    """
    p, v = _pair(phi, V)
    n = p.shape[0]
    if n < 2:
        return (0.0, None) if witness else 0.0
    w = weight(v, beta)
    iu, ju = np.triu_indices(n, k=1)
    ratios = np.abs(p[iu] - p[ju]) / (w[iu] + w[ju])
    k = int(np.argmax(ratios))
    val = float(ratios[k])
    return (val, (int(iu[k]), int(ju[k]))) if witness else val


def osc_batch(Phi, V, beta) -> np.ndarray:
    """Oscillation seminorm of every column of the (n, m) array ``Phi``."""
    Phi = np.asarray(Phi, dtype=float)
    if Phi.ndim == 1:
        Phi = Phi[:, None]
    n, m = Phi.shape
    if n < 2:
        return np.zeros(m)
    w = weight(V, beta)
    iu, ju = np.triu_indices(n, k=1)
    inv_d = 1.0 / (w[iu] + w[ju])
    chunk = max(1, _BATCH_BUDGET // len(iu))
    out = np.empty(m)
    for s in range(0, m, chunk):
        blk = Phi[:, s : s + chunk]
        out[s : s + chunk] = np.max(np.abs(blk[iu] - blk[ju]) * inv_d[:, None], axis=0)
    return out


def osc_via_min_shift(phi, V, beta) -> tuple[float, float]:
    """Minimise c -> ||phi + c||_beta exactly; returns (minimum, minimiser).

    Each state contributes the two lines +-(c + phi(x)) / w(x); the objective
    is their upper envelope, minimised in O(n log n).  Ties between minimisers
    resolve to the smallest c.
    """
    p, v = _pair(phi, V)
    w = weight(v, beta)
    slopes = np.concatenate([1.0 / w, -1.0 / w])
    icpt = np.concatenate([p / w, -p / w])
    c, val = minimize_max_affine(slopes, icpt, float(-p.max()), float(-p.min()))
    return val, c


def rho_beta(eta, V, beta) -> float:
    e, v = _pair(eta, V)
    return float(np.abs(e) @ weight(v, beta))


def sigma_beta(mu1, mu2, V, beta) -> float:
    """Distance between two measures; equals rho_beta of their difference."""
    return rho_beta(np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float), V, beta)


def sigma_batch(Eta, V, beta) -> np.ndarray:
    """rho_beta of each row of the (m, n) array ``Eta``."""
    return np.abs(np.asarray(Eta, dtype=float)) @ weight(V, beta)


def sigma_beta_dual_oracle(eta, V, beta) -> float:
    """sup { eta(phi) : |phi(x) - phi(y)| <= d_beta(x, y) } as a linear program.

    Only defined for zero-mass eta; the shift direction is removed by pinning
    phi(0) = 0.
    """
    e, v = _pair(eta, V)
    if abs(e.sum()) > tol.ZERO_MASS_TOL:
        raise ValueError(f"signed measure must have zero total mass, got {e.sum()!r}")
    n = e.shape[0]
    if n < 2:
        return 0.0
    D = pair_metric(v, beta)
    xs, ys = np.nonzero(~np.eye(n, dtype=bool))
    A = np.zeros((len(xs), n))
    A[np.arange(len(xs)), xs] = 1.0
    A[np.arange(len(xs)), ys] = -1.0
    bounds = [(0.0, 0.0)] + [(None, None)] * (n - 1)
    res = linprog(-e, A_ub=A, b_ub=D[xs, ys], bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"dual linear program failed: {res.message}")
    return float(-res.fun)
