"""Lipschitz dependence on the parameter: fitted hypotheses, closed-form
bounds, and empirical checks of those bounds over the theta grid.

Distances between parameters are Euclidean.  Pair selection:

* ``"adjacent"`` - consecutive points of a sorted one-dimensional grid.  By
  the triangle inequality the resulting constant is valid for all pairs.
* ``"all"`` - every unordered pair.
* ``"auto"`` - adjacent for one-dimensional grids, all pairs otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import tolerances as tol
from .certify import ContractionConstants, DriftCertificate, RStepCertificate, random_measure_pairs
from .errors import ModelValidationError, ParameterOutOfRange, ViolatedBound
from .norms import osc_seminorm, sigma_batch, weight
from .poisson import PoissonSolution
from .statespace import ParametricFamily


def grid_pairs(theta_grid, mode: str = "auto") -> list[tuple[int, int]]:
    grid = np.asarray(theta_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    m = grid.shape[0]
    if m < 2:
        raise ModelValidationError("Lipschitz estimation needs at least two grid points")
    if mode == "auto":
        mode = "adjacent" if grid.shape[1] == 1 else "all"
    if mode == "adjacent":
        if grid.shape[1] != 1:
            raise ValueError("adjacent pairs are only defined for one-dimensional grids")
        order = np.argsort(grid[:, 0], kind="stable")
        pairs = [(int(min(i, j)), int(max(i, j))) for i, j in zip(order[:-1], order[1:])]
    elif mode == "all":
        pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    else:
        raise ValueError(f"unknown pair mode {mode!r}")
    for i, j in pairs:
        if np.linalg.norm(grid[i] - grid[j]) == 0:
            raise ModelValidationError(f"grid points {i} and {j} coincide")
    return pairs


def _dist(grid, i, j) -> float:
    return float(np.linalg.norm(grid[i] - grid[j]))


def _kernel_lipschitz(family: ParametricFamily, V, beta, pairs):
    w = weight(V, beta)
    best, wit = 0.0, {}
    for i, j in pairs:
        D = np.asarray(family.kernels[i]) - np.asarray(family.kernels[j])
        per_state = (np.abs(D) @ w) / w / _dist(family.theta_grid, i, j)
        x = int(np.argmax(per_state))
        if per_state[x] > best:
            best, wit = float(per_state[x]), {"pair": [i, j], "state": x}
    return best, wit


def estimate_kernel_lipschitz(family: ParametricFamily, V, beta: float, pairs: str = "auto") -> float:
    """Smallest L with sigma(P_t delta_x, P_s delta_x) <= L |t - s| (1 + beta V(x)) on the checked pairs."""
    return _kernel_lipschitz(family, V, beta, grid_pairs(family.theta_grid, pairs))[0]


@dataclass(frozen=True)
class LipschitzHypotheses:
    L_P: float
    L_f: float
    K_f: float
    beta: float
    grid_pairs_checked: int
    pair_mode: str
    witnesses: dict[str, Any] = field(default_factory=dict)


def fit_hypotheses(family: ParametricFamily, V, beta: float, pairs: str = "auto") -> LipschitzHypotheses:
    if family.observables is None:
        raise ModelValidationError("family has no observables f_theta")
    pl = grid_pairs(family.theta_grid, pairs)
    L_P, wP = _kernel_lipschitz(family, V, beta, pl)
    w = weight(V, beta)
    L_f, wf = 0.0, {}
    for i, j in pl:
        diff = np.asarray(family.observables[i]) - np.asarray(family.observables[j])
        val = float(np.max(np.abs(diff) / w)) / _dist(family.theta_grid, i, j)
        if val > L_f:
            L_f, wf = val, {"pair": [i, j]}
    oscs = [osc_seminorm(f, V, beta) for f in family.observables]
    K_f = float(max(oscs))
    return LipschitzHypotheses(
        L_P=L_P, L_f=L_f, K_f=K_f, beta=float(beta), grid_pairs_checked=len(pl),
        pair_mode=pairs, witnesses={"L_P": wP, "L_f": wf, "K_f": {"theta_index": int(np.argmax(oscs))}},
    )


@dataclass(frozen=True)
class CheckReport:
    name: str
    checks: int
    worst_ratio: float
    witness: dict[str, Any]

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= 1.0 + 1e-9


def _track(state, ratios, meta):
    k = int(np.argmax(ratios))
    if ratios[k] > state[0]:
        state[0], state[1] = float(ratios[k]), meta(k)


def extend_to_measures_check(
    family: ParametricFamily, V, beta: float, L_P: float, trials: int = 200, seed: int = 0, pairs: str = "auto",
) -> tuple[CheckReport, CheckReport]:
    """Random-test the kernel bound applied to probability measures and to zero-mass signed measures.

    Ratios are observed / guaranteed; a ratio above 1 raises ViolatedBound.
    """
    w = weight(V, beta)
    n = len(w)
    rng = np.random.default_rng(seed)
    mu, mu2 = random_measure_pairs(n, trials, rng)
    eta = mu - mu2
    pl = grid_pairs(family.theta_grid, pairs)
    prob, signed = [0.0, {}], [0.0, {}]
    for i, j in pl:
        D = np.asarray(family.kernels[i]) - np.asarray(family.kernels[j])
        dt = _dist(family.theta_grid, i, j)
        for label, M, st in (("probability", mu, prob), ("signed", eta, signed)):
            lhs = sigma_batch(M @ D, V, beta)
            rhs = L_P * dt * (np.abs(M) @ w)
            if np.any(lhs > rhs + tol.LIPSCHITZ_TOL):
                k = int(np.argmax(lhs - rhs))
                raise ViolatedBound(f"{label}-measure kernel bound fails", witness={"pair": [i, j], "measure": M[k].tolist()})
            nz = rhs > 0
            if np.any(nz):
                _track(st, lhs[nz] / rhs[nz], lambda k, i=i, j=j: {"pair": [i, j]})
    cnt = trials * len(pl)
    return (CheckReport("measures", cnt, prob[0], prob[1]), CheckReport("signed measures", cnt, signed[0], signed[1]))


@dataclass(frozen=True)
class NStepBounds:
    """Evaluators for the n-step parameter bounds.

    ``general(dtheta, mu_V)`` bounds sigma(mu P_t^n, mu P_s^n) for a
    probability mu with mean mu_V of V; ``zero_mass(dtheta, eta_w)`` bounds it
    for a zero-mass eta with weighted mass eta_w = |eta|(1 + beta V).
    """

    n: int
    L_P: float
    L_P_prime: float
    alpha: float
    gamma: float
    beta: float

    def general(self, dtheta, mu_V):
        extra = self.alpha ** self.n * self.beta * np.asarray(mu_V) / (self.alpha - self.gamma)
        return self.L_P * np.asarray(dtheta) * (self.L_P_prime + extra)

    def zero_mass(self, dtheta, eta_w):
        if self.n == 0:
            return np.zeros_like(np.asarray(eta_w, dtype=float))
        return self.L_P * np.asarray(dtheta) * self.n * self.alpha ** (self.n - 1) * np.asarray(eta_w)


def l_p_prime(cc: ContractionConstants, drift: DriftCertificate | None = None) -> float:
    level = cc.stationary_level if drift is None else drift.stationary_level
    return (1.0 + cc.beta * level) / (1.0 - cc.alpha)


def nstep_bounds(cc: ContractionConstants, drift: DriftCertificate | None, L_P: float, n: int) -> NStepBounds:
    gamma = cc.gamma if drift is None else drift.gamma
    if not cc.alpha > gamma:
        raise ParameterOutOfRange(f"alpha={cc.alpha} must exceed gamma={gamma}")
    return NStepBounds(int(n), float(L_P), l_p_prime(cc, drift), cc.alpha, gamma, cc.beta)


def nstep_check(
    family: ParametricFamily, V, cc: ContractionConstants, drift: DriftCertificate | None, L_P: float,
    n_max: int = 20, trials: int = 100, seed: int = 0, pairs: str = "auto",
) -> tuple[CheckReport, CheckReport]:
    """Random-test both n-step bounds for n = 1..n_max over the grid pairs."""
    beta = cc.beta
    w = weight(V, beta)
    v = np.asarray(V, dtype=float)
    n_states = len(w)
    rng = np.random.default_rng(seed)
    mu, mu2 = random_measure_pairs(n_states, trials, rng)
    eta = mu - mu2
    mu_V = mu @ v
    eta_w = np.abs(eta) @ w
    gen, zm = [0.0, {}], [0.0, {}]
    for i, j in grid_pairs(family.theta_grid, pairs):
        Pi, Pj = np.asarray(family.kernels[i]), np.asarray(family.kernels[j])
        dt = _dist(family.theta_grid, i, j)
        a_mu, b_mu, a_eta, b_eta = mu, mu, eta, eta
        for n in range(1, n_max + 1):
            a_mu, b_mu = a_mu @ Pi, b_mu @ Pj
            a_eta, b_eta = a_eta @ Pi, b_eta @ Pj
            nb = nstep_bounds(cc, drift, L_P, n)
            for label, lhs, rhs, st in (
                ("general", sigma_batch(a_mu - b_mu, V, beta), nb.general(dt, mu_V), gen),
                ("zero-mass", sigma_batch(a_eta - b_eta, V, beta), nb.zero_mass(dt, eta_w), zm),
            ):
                if np.any(lhs > rhs + tol.LIPSCHITZ_TOL):
                    raise ViolatedBound(f"{label} n-step bound fails", witness={"pair": [i, j], "n": n})
                nz = rhs > 0
                if np.any(nz):
                    _track(st, lhs[nz] / rhs[nz], lambda k, i=i, j=j, n=n: {"pair": [i, j], "n": n})
    cnt = trials * n_max * len(grid_pairs(family.theta_grid, pairs))
    return CheckReport("n-step general", cnt, gen[0], gen[1]), CheckReport("n-step zero-mass", cnt, zm[0], zm[1])


def invariant_measure_check(
    family: ParametricFamily, mu_stars: Sequence, V, cc: ContractionConstants, drift, L_P: float, pairs: str = "all",
) -> CheckReport:
    """sigma(mu*_t, mu*_s) <= L_P L_P' |t - s| on grid pairs."""
    bound = L_P * l_p_prime(cc, drift)
    worst, wit = 0.0, {}
    for i, j in grid_pairs(family.theta_grid, pairs):
        dt = _dist(family.theta_grid, i, j)
        lhs = float(sigma_batch(np.asarray(mu_stars[i]) - np.asarray(mu_stars[j]), V, cc.beta))
        rhs = bound * dt
        if lhs > rhs + tol.LIPSCHITZ_TOL:
            raise ViolatedBound("invariant-measure Lipschitz bound fails", witness={"pair": [i, j], "lhs": lhs, "rhs": rhs})
        if rhs > 0 and lhs / rhs > worst:
            worst, wit = lhs / rhs, {"pair": [i, j]}
    return CheckReport("invariant measures", len(grid_pairs(family.theta_grid, pairs)), worst, wit)


# ---------------------------------------------------------------- closed forms

FORMULAS = {
    "L_P_prime": "(1 + beta K/(1-gamma)) / (1-alpha)",
    "L_h": "(L_f + L_P K_f/(1-alpha)) (1 + beta K/(1-gamma))",
    "L_u1": "L_f/(1-alpha) + L_P K_f/(1-alpha)^2",
    "L_u2": "L_f/(1-alpha) + 2 L_P K_f/(1-alpha)^2",
    "L_u": "(L_f + 2 L_P K_f/(1-alpha)) (2 + beta K/(1-gamma)) / (1-alpha)",
    "K_u": "(2 + beta K/(1-gamma)) / (1-alpha)",
    "L_P_doubleprime": "L_P max(1/(a''-1) + beta K_1/((a''-gamma_1)(gamma_1-1)), 1/(a''-gamma_1))",
    "L_rh": "(L_f + L_{P^r} K_f/(1-alpha_r)) (1 + beta K_r/(1-gamma_r))",
    "L_ru": "L_u^(r) max(A_r, B_r) + L_P'' K_u^(r) K_f sum_{m=1}^{r-1} a''^m; "
            "A_r = r + beta K_1 ((gamma_1^r-1)/(gamma_1-1) - r)/(gamma_1-1), B_r = (gamma_1^r-1)/(gamma_1-1)",
}


@dataclass(frozen=True)
class LipschitzBounds:
    """Closed-form constants; ``None`` marks constants of the other route."""

    L_P_prime: float
    L_h: float
    L_u: float
    L_u1: float
    L_u2: float
    K_u: float
    L_P_doubleprime: float | None = None
    L_P_r: float | None = None
    L_rh: float | None = None
    L_ru: float | None = None
    alpha_doubleprime: float | None = None
    beta: float = 0.0

    @property
    def h_constant(self) -> float:
        return self.L_rh if self.L_rh is not None else self.L_h

    @property
    def u_constant(self) -> float:
        return self.L_ru if self.L_ru is not None else self.L_u

    def as_dict(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _one_step(alpha, beta, level, L_P, L_f, K_f):
    q = 1.0 / (1.0 - alpha)
    L_P_prime = (1.0 + beta * level) * q
    L_h = (L_f + L_P * K_f * q) * (1.0 + beta * level)
    L_u1 = L_f * q + L_P * K_f * q * q
    L_u2 = L_f * q + 2.0 * L_P * K_f * q * q
    K_u = (2.0 + beta * level) * q
    L_u = (L_f + 2.0 * L_P * K_f * q) * (2.0 + beta * level) * q
    return L_P_prime, L_h, L_u, L_u1, L_u2, K_u


def theoretical_constants(
    cc: ContractionConstants, drift: DriftCertificate | None, hyp: LipschitzHypotheses,
) -> LipschitzBounds:
    level = cc.stationary_level if drift is None else drift.stationary_level
    vals = _one_step(cc.alpha, cc.beta, level, hyp.L_P, hyp.L_f, hyp.K_f)
    return LipschitzBounds(*vals, beta=cc.beta)


def l_p_doubleprime(L_P, alpha_dd, beta, gamma_1, K_1) -> float:
    first = 1.0 / (alpha_dd - 1.0) + beta * K_1 / ((alpha_dd - gamma_1) * (gamma_1 - 1.0))
    return L_P * max(first, 1.0 / (alpha_dd - gamma_1))


def relaxed_constants(
    rcert: RStepCertificate,
    hyp: LipschitzHypotheses,
    alpha_dd: float | None = None,
    *,
    family: ParametricFamily | None = None,
    V=None,
    L_P_r: float | None = None,
    pairs: str = "auto",
) -> LipschitzBounds:
    """Constants for the r-step route.

    ``hyp`` must be fitted at the weight of the r-step certificate.  The
    kernel constant of P^r is estimated from ``family`` unless ``L_P_r`` is
    given.
    """
    beta = rcert.beta
    if abs(hyp.beta - beta) > 1e-12 * max(1.0, beta):
        raise ParameterOutOfRange(f"hypotheses fitted at beta={hyp.beta}, certificate uses beta={beta}")
    if alpha_dd is None:
        alpha_dd = rcert.alpha_prime * tol.DEFAULT_ALPHA_DD_FACTOR
    if not alpha_dd > rcert.alpha_prime:
        raise ParameterOutOfRange(f"alpha''={alpha_dd} must exceed alpha'={rcert.alpha_prime}")
    r = rcert.r
    if L_P_r is None:
        if r == 1:
            L_P_r = hyp.L_P
        else:
            if family is None or V is None:
                raise ValueError("family and V are needed to estimate the kernel constant of P^r")
            L_P_r = estimate_kernel_lipschitz(family.power(r), V, beta, pairs)
    g1, K1 = rcert.gamma_1, rcert.K_1
    L_dd = l_p_doubleprime(hyp.L_P, alpha_dd, beta, g1, K1)
    level_r = rcert.drift_r.stationary_level
    one = _one_step(rcert.alpha_r, beta, level_r, L_P_r, hyp.L_f, hyp.K_f)
    L_P_prime, L_rh, L_u_r, L_u1, L_u2, K_u_r = one
    B_r = (g1 ** r - 1.0) / (g1 - 1.0)
    A_r = r + beta * K1 * (B_r - r) / (g1 - 1.0)
    geo = sum(alpha_dd ** m for m in range(1, r))
    L_ru = L_u_r * max(A_r, B_r) + L_dd * K_u_r * hyp.K_f * geo
    return LipschitzBounds(
        L_P_prime=L_P_prime, L_h=L_rh, L_u=L_u_r, L_u1=L_u1, L_u2=L_u2, K_u=K_u_r,
        L_P_doubleprime=L_dd, L_P_r=float(L_P_r), L_rh=L_rh, L_ru=L_ru,
        alpha_doubleprime=float(alpha_dd), beta=beta,
    )


# ---------------------------------------------------------------- empirical


@dataclass(frozen=True)
class PairRecord:
    i: int
    j: int
    dtheta: float
    dh: float
    du_weighted: float
    ratio_h: float
    ratio_u: float


@dataclass(frozen=True)
class EmpiricalReport:
    pairs: tuple[PairRecord, ...]
    L_h: float
    L_u: float
    max_ratio_h: float
    max_ratio_u: float
    max_slope_h: float

    @property
    def passed(self) -> bool:
        return self.max_ratio_h <= 1 + 1e-9 and self.max_ratio_u <= 1 + 1e-9


def empirical_certify(
    family: ParametricFamily,
    bounds: LipschitzBounds,
    solutions: Sequence[PoissonSolution],
    V,
    pairs: str = "all",
    raise_on_violation: bool = True,
) -> EmpiricalReport:
    """Check |h_t - h_s| <= L_h |t-s| and |u_t - u_s| <= L_u (1 + beta V) |t-s| on grid pairs.

    Uses the relaxed constants when ``bounds`` carries them.
    """
    L_h, L_u = bounds.h_constant, bounds.u_constant
    w = weight(V, bounds.beta)
    recs = []
    slope = 0.0
    for i, j in grid_pairs(family.theta_grid, pairs):
        dt = _dist(family.theta_grid, i, j)
        dh = abs(solutions[i].h - solutions[j].h)
        du = float(np.max(np.abs(np.asarray(solutions[i].u) - np.asarray(solutions[j].u)) / w))
        rh = dh / (L_h * dt) if L_h > 0 else (0.0 if dh <= tol.LIPSCHITZ_TOL else np.inf)
        ru = du / (L_u * dt) if L_u > 0 else (0.0 if du <= tol.LIPSCHITZ_TOL else np.inf)
        slope = max(slope, dh / dt)
        recs.append(PairRecord(i, j, dt, dh, du, rh, ru))
        if raise_on_violation and (dh > L_h * dt + tol.LIPSCHITZ_TOL or du > L_u * dt + tol.LIPSCHITZ_TOL):
            raise ViolatedBound(
                "parameter-Lipschitz bound fails",
                witness={"pair": [i, j], "dh": dh, "L_h dtheta": L_h * dt, "du": du, "L_u dtheta": L_u * dt},
            )
    return EmpiricalReport(
        tuple(recs), L_h, L_u,
        max((r.ratio_h for r in recs), default=0.0),
        max((r.ratio_u for r in recs), default=0.0),
        slope,
    )

