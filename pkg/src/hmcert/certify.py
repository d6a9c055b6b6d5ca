"""Fitting and verification of drift, minorization and growth conditions.

Every certificate returned here has been checked against its defining
inequality on the full theta grid; constructing one by hand with constants
that do not hold raises :class:`ViolatedBound`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import tolerances as tol
from ._piecewise import minimize_max_affine
from .errors import (
    EmptySmallSet,
    InfeasibleDrift,
    NoFeasibleR,
    ParameterOutOfRange,
    SandwichViolated,
    ViolatedBound,
    ZeroMinorization,
)
from .norms import osc_batch, sigma_batch, weight
from .statespace import Lyapunov, ParametricFamily, ProbabilityMeasure


# ---------------------------------------------------------------- drift


def _stack_PV(family: ParametricFamily, V) -> np.ndarray:
    """(m, n) array of (P_theta V)(x)."""
    v = np.asarray(V, dtype=float)
    return np.stack([np.asarray(k) @ v for k in family.kernels])


def _fit_drift_pieces(a: np.ndarray, v: np.ndarray, gamma: float | None = None):
    """Pick (gamma, K) with a <= gamma v + K for every paired entry.

    Without a prescribed gamma, the point of the feasible frontier with the
    smallest stationary level K/(1-gamma) is chosen (smallest gamma on ties).
    With s = 1/(1-gamma) that level is max(0, max_i((a_i - v_i) s + v_i)),
    a convex piecewise-linear function of s minimised exactly.
    """
    a, v = a.ravel(), v.ravel()
    if gamma is None:
        s_lo = 1.0 / (1.0 - tol.GAMMA_MIN)
        s_hi = 1.0 / (1.0 - tol.GAMMA_MAX)
        s, _ = minimize_max_affine(np.append(a - v, 0.0), np.append(v, 0.0), s_lo, s_hi)
        gamma = max(tol.GAMMA_MIN, 1.0 - 1.0 / s)
    K = max(0.0, float(np.max(a - gamma * v)))
    return float(gamma), K


def _drift_proxy_ratio(a: np.ndarray, v: np.ndarray) -> float:
    """max over grid of (P V)(x*) / V(x*) at the states maximising V."""
    vmax = v.max()
    if vmax <= 0:
        return 0.0
    top = v >= vmax
    return float(np.max(a[..., top]) / vmax)


@dataclass(frozen=True, eq=False)
class DriftCertificate:
    """Verified constants for P* V <= gamma V + K on every grid point.

    ``slack[t, x]`` is gamma V(x) + K - (P_t V)(x); it is nonnegative up to
    the drift tolerance.
    """

    gamma: float
    K: float
    slack: np.ndarray
    grid_hash: str = ""
    r: int = 1
    provenance: dict[str, str] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        s = np.array(self.slack, dtype=float)
        s.flags.writeable = False
        object.__setattr__(self, "slack", s)
        if self.K < 0:
            raise ViolatedBound(f"drift constant K={self.K} is negative")
        if s.size and s.min() < -tol.DRIFT_TOL:
            t, x = np.unravel_index(int(np.argmin(s)), s.shape)
            raise ViolatedBound(
                f"drift inequality fails by {-s.min():.3e}",
                witness={"theta_index": int(t), "state": int(x)},
            )

    @property
    def stationary_level(self) -> float:
        """K / (1 - gamma), the bound on the invariant mean of V."""
        return self.K / (1.0 - self.gamma) if self.gamma < 1 else float("inf")

    @property
    def worst(self) -> dict[str, Any]:
        t, x = np.unravel_index(int(np.argmin(self.slack)), self.slack.shape)
        return {"theta_index": int(t), "state": int(x), "slack": float(self.slack[t, x])}


def verify_drift(family: ParametricFamily, V, gamma: float, K: float, **kw) -> DriftCertificate:
    a = _stack_PV(family, V)
    slack = gamma * np.asarray(V, dtype=float)[None, :] + K - a
    return DriftCertificate(float(gamma), float(K), slack, grid_hash=family.grid_hash(), **kw)


def fit_drift(family: ParametricFamily, V: Lyapunov, gamma: float | None = None, r: int = 1) -> DriftCertificate:
    """Uniform drift constants over the grid.

    ``gamma`` may be supplied (then only K is fitted).  Raises
    :class:`InfeasibleDrift` when even the states maximising V fail to
    contract under some kernel on the grid.
    """
    v = np.asarray(V, dtype=float)
    a = _stack_PV(family, v)
    ratio = _drift_proxy_ratio(a, v)
    if ratio >= tol.GAMMA_MAX:
        raise InfeasibleDrift(
            f"P V / V reaches {ratio:.6g} at the maximum of V; no gamma < 1 is feasible",
            ratio=ratio,
        )
    if gamma is not None:
        if not 0 < gamma < 1:
            raise ParameterOutOfRange(f"gamma must lie in (0, 1), got {gamma!r}")
        prov = {"gamma": "user-supplied", "K": "fitted"}
    else:
        prov = {"gamma": "fitted", "K": "fitted"}
    g, K = _fit_drift_pieces(a, np.broadcast_to(v, a.shape), gamma)
    return verify_drift(family, v, g, K, r=r, provenance=prov)


# ---------------------------------------------------------------- minorization


@dataclass(frozen=True, eq=False)
class MinorizationCertificate:
    R: float
    small_set: tuple[int, ...]
    alpha_bar: float
    mu_bar: ProbabilityMeasure
    slack: float = 0.0
    provenance: dict[str, str] = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0 < self.alpha_bar <= 1 + 1e-12:
            raise ZeroMinorization(f"alpha_bar={self.alpha_bar} is not in (0, 1]")
        if self.slack < -tol.MINORIZATION_TOL:
            raise ViolatedBound(f"minorization fails by {-self.slack:.3e}")


def fit_minorization(
    family: ParametricFamily,
    V: Lyapunov,
    drift: DriftCertificate,
    R: float | None = None,
    margin: float = tol.DEFAULT_R_MARGIN,
) -> MinorizationCertificate:
    """Largest common component of the rows leaving C = {V <= R}.

    R defaults to (1 + margin) * 2K/(1-gamma), using the floored K when K = 0
    so that the strict inequality remains satisfiable.
    """
    v = np.asarray(V, dtype=float)
    K_eff = max(drift.K, tol.K_FLOOR)
    threshold = 2.0 * drift.K / (1.0 - drift.gamma)
    if R is None:
        R = 2.0 * K_eff / (1.0 - drift.gamma) * (1.0 + margin)
        prov = "defaulted"
    else:
        prov = "user-supplied"
    if not R > threshold:
        raise ParameterOutOfRange(f"R={R} must exceed 2K/(1-gamma)={threshold}")
    C = np.flatnonzero(v <= R)
    if C.size == 0:
        raise EmptySmallSet(f"no state has V <= R={R}", R=R)
    low = np.min(np.stack([np.asarray(k)[C] for k in family.kernels]), axis=(0, 1))
    alpha_bar = float(low.sum())
    if alpha_bar <= 0:
        raise ZeroMinorization(
            f"rows leaving the small set ({C.size} states) share no common mass",
            R=float(R),
            small_set=[int(c) for c in C],
        )
    mu_bar = low / alpha_bar
    # re-check from the normalised measure, which is what downstream uses
    slack = min(float(np.min(np.asarray(k)[C] - alpha_bar * mu_bar)) for k in family.kernels)
    return MinorizationCertificate(
        R=float(R),
        small_set=tuple(int(c) for c in C),
        alpha_bar=min(alpha_bar, 1.0),
        mu_bar=ProbabilityMeasure(mu_bar),
        slack=slack,
        provenance={"R": prov, "alpha_bar": "fitted", "mu_bar": "fitted"},
    )


# ---------------------------------------------------------------- contraction constants


@dataclass(frozen=True)
class ContractionConstants:
    """Weight beta and contraction factor alpha, with the inputs that fix them.

    ``alpha_minorize`` and ``alpha_drift`` are the two branches whose maximum
    is ``alpha``.
    """

    alpha0: float
    gamma0: float
    beta: float
    alpha: float
    alpha_minorize: float
    alpha_drift: float
    gamma: float
    K: float
    R: float
    alpha_bar: float
    provenance: tuple[tuple[str, str], ...] = ()
    flags: tuple[str, ...] = ()

    @property
    def stationary_level(self) -> float:
        return self.K / (1.0 - self.gamma)


def contraction_branches(alpha0, gamma0, alpha_bar, R, beta):
    a1 = 1.0 - (alpha_bar - alpha0)
    a2 = (2.0 + R * beta * gamma0) / (2.0 + R * beta)
    return a1, a2


def hm_constants(
    drift: DriftCertificate,
    minor: MinorizationCertificate,
    alpha0: float | None = None,
    gamma0: float | None = None,
    optimize: bool = False,
    floor_K: bool = False,
) -> ContractionConstants:
    """beta = alpha0 / K and the contraction factor alpha.

    Free parameters default to the midpoints of their admissible open
    intervals.  ``optimize=True`` instead grid-searches both for the smallest
    alpha.  K = 0 is rejected unless ``floor_K`` substitutes a tiny positive K.
    """
    g, R, ab = drift.gamma, minor.R, minor.alpha_bar
    K = drift.K
    flags: list[str] = []
    if K <= 0:
        if not floor_K:
            raise ParameterOutOfRange("K = 0 leaves beta = alpha0/K undefined")
        K = tol.K_FLOOR
        flags.append("K floored to avoid division by zero")
    g0_lo = g + 2.0 * K / R
    if not g0_lo < 1:
        raise ParameterOutOfRange(f"gamma + 2K/R = {g0_lo} must be < 1 (increase R)")
    prov = {"alpha0": "user-supplied" if alpha0 is not None else "defaulted",
            "gamma0": "user-supplied" if gamma0 is not None else "defaulted"}
    if optimize and alpha0 is None and gamma0 is None:
        a0s = ab * np.linspace(0.01, 0.99, 99)
        g0s = g0_lo + (1.0 - g0_lo) * np.linspace(0.01, 0.99, 99)
        A0, G0 = np.meshgrid(a0s, g0s, indexing="ij")
        a1, a2 = contraction_branches(A0, G0, ab, R, A0 / K)
        i, j = np.unravel_index(int(np.argmin(np.maximum(a1, a2))), A0.shape)
        alpha0, gamma0 = float(a0s[i]), float(g0s[j])
        prov = {"alpha0": "optimized", "gamma0": "optimized"}
    if alpha0 is None:
        alpha0 = ab / 2.0
    if gamma0 is None:
        gamma0 = (g0_lo + 1.0) / 2.0
    if not 0 < alpha0 < ab:
        raise ParameterOutOfRange(f"alpha0={alpha0} must lie in (0, alpha_bar={ab})")
    if not g0_lo < gamma0 < 1:
        raise ParameterOutOfRange(f"gamma0={gamma0} must lie in ({g0_lo}, 1)")
    beta = alpha0 / K
    a1, a2 = contraction_branches(alpha0, gamma0, ab, R, beta)
    alpha = max(a1, a2)
    if not g < alpha < 1:
        raise ParameterOutOfRange(f"alpha={alpha} is not in (gamma={g}, 1)")
    prov.update(beta="derived", alpha="derived")
    return ContractionConstants(
        alpha0=float(alpha0), gamma0=float(gamma0), beta=float(beta), alpha=float(alpha),
        alpha_minorize=float(a1), alpha_drift=float(a2), gamma=g, K=K, R=R, alpha_bar=ab,
        provenance=tuple(sorted(prov.items())), flags=tuple(flags),
    )


# ---------------------------------------------------------------- empirical contraction


@dataclass(frozen=True)
class ContractionReport:
    factor: float
    worst_ratio: float
    checks: int
    witness: dict[str, Any]

    @property
    def passed(self) -> bool:
        return self.worst_ratio <= self.factor + tol.CONTRACTION_TOL


def random_functions(n: int, m: int, w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """(n, m) test functions mixing Gaussian, weight-scaled, signed-weight and indicator shapes."""
    kinds = rng.integers(0, 4, size=m)
    out = rng.normal(size=(n, m))
    scaled = kinds == 1
    out[:, scaled] *= w[:, None]
    signed = kinds == 2
    out[:, signed] = rng.choice([-1.0, 1.0], size=(n, int(signed.sum()))) * w[:, None]
    ind = kinds == 3
    out[:, ind] = (rng.random((n, int(ind.sum()))) < 0.5).astype(float)
    return out


def random_measure_pairs(n: int, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two (m, n) stacks of probability vectors: Dirichlet draws, some replaced by point masses."""
    mu1 = rng.dirichlet(np.full(n, 0.5), size=m)
    mu2 = rng.dirichlet(np.full(n, 0.5), size=m)
    dirac = rng.random(m) < 0.3
    mu1[dirac] = np.eye(n)[rng.integers(0, n, int(dirac.sum()))]
    mu2[dirac] = np.eye(n)[rng.integers(0, n, int(dirac.sum()))]
    return mu1, mu2


def check_function_contraction(
    family: ParametricFamily, V, cc: ContractionConstants, trials: int = 1000, seed: int = 0,
    factor: float | None = None, beta: float | None = None,
) -> ContractionReport:
    """Random-test osc(P* phi) <= factor * osc(phi) at every grid point.

    ``factor`` defaults to ``cc.alpha``.
    """
    factor = cc.alpha if factor is None else factor
    beta = cc.beta if beta is None else beta
    w = weight(V, beta)
    rng = np.random.default_rng(seed)
    Phi = random_functions(len(w), trials, w, rng)
    base = osc_batch(Phi, V, beta)
    worst, wit = 0.0, {}
    for t, k in enumerate(family.kernels):
        img = osc_batch(np.asarray(k) @ Phi, V, beta)
        bad = img > factor * base + tol.CONTRACTION_TOL
        if np.any(bad):
            j = int(np.argmax(bad))
            raise ViolatedBound(
                f"osc(P* phi)={img[j]:.6g} exceeds {factor:.6g} * osc(phi)={base[j]:.6g}",
                witness={"theta_index": t, "phi": Phi[:, j].tolist()},
            )
        ok = base > 0
        if np.any(ok):
            r = img[ok] / base[ok]
            j = int(np.argmax(r))
            if r[j] > worst:
                worst, wit = float(r[j]), {"theta_index": t, "trial": int(np.flatnonzero(ok)[j])}
    return ContractionReport(factor, worst, trials * len(family), wit)


def check_measure_contraction(
    family: ParametricFamily, V, cc: ContractionConstants, trials: int = 1000, seed: int = 0,
    factor: float | None = None, beta: float | None = None,
) -> ContractionReport:
    """Random-test sigma(P mu1, P mu2) <= factor * sigma(mu1, mu2)."""
    factor = cc.alpha if factor is None else factor
    beta = cc.beta if beta is None else beta
    n = len(np.asarray(V))
    rng = np.random.default_rng(seed)
    mu1, mu2 = random_measure_pairs(n, trials, rng)
    eta = mu1 - mu2
    base = sigma_batch(eta, V, beta)
    worst, wit = 0.0, {}
    for t, k in enumerate(family.kernels):
        img = sigma_batch(eta @ np.asarray(k), V, beta)
        bad = img > factor * base + tol.CONTRACTION_TOL
        if np.any(bad):
            j = int(np.argmax(bad))
            raise ViolatedBound(
                f"sigma(P mu1, P mu2)={img[j]:.6g} exceeds {factor:.6g} * {base[j]:.6g}",
                witness={"theta_index": t, "mu1": mu1[j].tolist(), "mu2": mu2[j].tolist()},
            )
        ok = base > 0
        if np.any(ok):
            r = img[ok] / base[ok]
            j = int(np.argmax(r))
            if r[j] > worst:
                worst, wit = float(r[j]), {"theta_index": t, "trial": int(np.flatnonzero(ok)[j])}
    return ContractionReport(factor, worst, trials * len(family), wit)


# ---------------------------------------------------------------- r-step


@dataclass(frozen=True, eq=False)
class RStepCertificate:
    """Drift and minorization for P^r plus one-step growth for P.

    ``beta`` and ``alpha_r`` come from the contraction constants of P^r;
    the combined decay is osc(P*^n phi) <= C alpha^n osc(phi).
    """

    r: int
    drift_r: DriftCertificate
    minor_r: MinorizationCertificate
    cc_r: ContractionConstants
    gamma_1: float
    K_1: float
    growth_slack: np.ndarray
    alpha_prime: float
    C: float
    alpha: float
    route: str = "r-step"
    provenance: dict[str, str] = field(default_factory=dict)
    # (gamma, K) of the per-theta drift when built from individual drift
    individual: tuple[float, float] | None = None

    def __post_init__(self):
        if self.gamma_1 <= 1:
            raise ParameterOutOfRange(f"gamma_1={self.gamma_1} must exceed 1")
        s = np.asarray(self.growth_slack)
        if s.size and s.min() < -tol.DRIFT_TOL:
            t, x = np.unravel_index(int(np.argmin(s)), s.shape)
            raise ViolatedBound("one-step growth bound fails",
                                witness={"theta_index": int(t), "state": int(x)})
        if self.C < 1 - 1e-12:
            raise ViolatedBound(f"C={self.C} < 1")

    @property
    def beta(self) -> float:
        return self.cc_r.beta

    @property
    def alpha_r(self) -> float:
        return self.cc_r.alpha

    @property
    def gamma_r(self) -> float:
        return self.drift_r.gamma

    @property
    def K_r(self) -> float:
        return self.drift_r.K


def fit_growth(family: ParametricFamily, V, beta: float) -> tuple[float, float]:
    """One-step growth constants (gamma_1 > 1, K_1) minimising max(gamma_1, 1 + beta K_1)."""
    v = np.asarray(V, dtype=float)
    a = _stack_PV(family, v).ravel()
    vv = np.broadcast_to(v, (len(family), len(v))).ravel()
    # alpha'(g) = max(g, 1, max_i(1 + beta (a_i - g v_i)))
    slopes = np.concatenate([[1.0, 0.0], -beta * vv])
    icpt = np.concatenate([[0.0, 1.0], 1.0 + beta * a])
    hi = tol.GROWTH_MIN + 1.0 + beta * float(max(a.max(), 0.0))
    g1, _ = minimize_max_affine(slopes, icpt, tol.GROWTH_MIN, hi)
    K1 = max(0.0, float(np.max(a - g1 * vv)))
    return float(g1), K1


def _growth_slack(family, V, g1, K1):
    v = np.asarray(V, dtype=float)
    return g1 * v[None, :] + K1 - _stack_PV(family, v)


def compose_r_step(r, drift_r, minor_r, cc_r, gamma_1, K_1, slack, route="r-step", provenance=None, individual=None):
    beta = cc_r.beta
    alpha_prime = max(1.0 + beta * K_1, gamma_1)
    C = alpha_prime ** (r - 1) / cc_r.alpha
    alpha = cc_r.alpha ** (1.0 / r)
    return RStepCertificate(
        r=r, drift_r=drift_r, minor_r=minor_r, cc_r=cc_r, gamma_1=gamma_1, K_1=K_1,
        growth_slack=slack, alpha_prime=alpha_prime, C=C, alpha=alpha, route=route,
        provenance=provenance or {}, individual=individual,
    )


def fit_r_step(
    family: ParametricFamily,
    V: Lyapunov,
    r_max: int = 10,
    R: float | None = None,
    alpha0: float | None = None,
    gamma0: float | None = None,
    optimize: bool = False,
) -> RStepCertificate:
    """Smallest r <= r_max for which P^r admits drift and minorization.

    Growth constants for the one-step kernel are then fitted at the weight
    beta selected for P^r.
    """
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    failures: dict[int, str] = {}
    for r in range(1, r_max + 1):
        fam_r = family if r == 1 else family.power(r)
        try:
            drift_r = fit_drift(fam_r, V, r=r)
            minor_r = fit_minorization(fam_r, V, drift_r, R)
            cc_r = hm_constants(drift_r, minor_r, alpha0, gamma0, optimize=optimize, floor_K=True)
        except (InfeasibleDrift, EmptySmallSet, ZeroMinorization, ParameterOutOfRange) as exc:
            failures[r] = f"{type(exc).__name__}: {exc}"
            continue
        g1, K1 = fit_growth(family, V, cc_r.beta)
        return compose_r_step(
            r, drift_r, minor_r, cc_r, g1, K1, _growth_slack(family, V, g1, K1),
            provenance={"r": "fitted", "gamma_1": "fitted", "K_1": "fitted",
                        "alpha_prime": "derived", "C": "derived", "alpha": "derived"},
        )
    raise NoFeasibleR(f"no r <= {r_max} gives drift and minorization for P^r", failures=failures)


def check_r_step_decay(
    family: ParametricFamily, V, rcert: RStepCertificate, n_max: int = 20, trials: int = 200, seed: int = 0,
) -> float:
    """Random-test osc(P*^n phi) <= C alpha^n osc(phi) and the finer
    alpha_r^m alpha'^k bound (n = r m + k) for n = 1..n_max.  Returns the
    worst ratio of observed to guaranteed decay.
    """
    beta = rcert.beta
    w = weight(V, beta)
    rng = np.random.default_rng(seed)
    Phi = random_functions(len(w), trials, w, rng)
    base = osc_batch(Phi, V, beta)
    ok = base > 0
    worst = 0.0
    for t, k in enumerate(family.kernels):
        P = np.asarray(k)
        cur = Phi
        for n in range(1, n_max + 1):
            cur = P @ cur
            img = osc_batch(cur, V, beta)
            m, rem = divmod(n, rcert.r)
            fine = rcert.alpha_r ** m * rcert.alpha_prime ** rem
            coarse = rcert.C * rcert.alpha ** n
            bound = min(fine, coarse)
            if fine > coarse * (1 + 1e-12):
                raise ViolatedBound("stepwise decay bound exceeds C alpha^n", witness={"n": n})
            bad = img > bound * base + tol.CONTRACTION_TOL
            if np.any(bad):
                j = int(np.argmax(bad))
                raise ViolatedBound(
                    f"osc(P*^{n} phi) exceeds the r-step decay bound",
                    witness={"theta_index": t, "n": n, "phi": Phi[:, j].tolist()},
                )
            if np.any(ok):
                worst = max(worst, float(np.max(img[ok] / (bound * base[ok]))))
    return worst


# ---------------------------------------------------------------- individual drift


def check_sandwich(V_family, V, a, b, c, d) -> None:
    v = np.asarray(V, dtype=float)
    Vt = np.stack([np.asarray(x, dtype=float) for x in V_family])
    lo = a * v + b - Vt
    hi = Vt - (c * v + d)
    for name, arr in (("lower", lo), ("upper", hi)):
        if arr.max() > tol.DRIFT_TOL:
            t, x = np.unravel_index(int(np.argmax(arr)), arr.shape)
            raise SandwichViolated(
                f"{name} sandwich bound fails by {arr.max():.3e}",
                theta_index=int(t), state=int(x),
            )


def individual_to_uniform(
    family: ParametricFamily,
    V_family,
    V: Lyapunov,
    a: float, b: float, c: float, d: float,
    gamma: float | None = None,
    r_max: int = 200,
    R: float | None = None,
    alpha0: float | None = None,
    gamma0: float | None = None,
) -> RStepCertificate:
    """Turn per-theta drift for V_theta into r-step drift for a common V.

    The per-theta functions must satisfy a V + b <= V_theta <= c V + d.  The
    common (gamma, K) for the individual drift is fitted (or gamma supplied),
    then r is the smallest integer with gamma^r c / a < 1.
    """
    if not (a > 0 and c > 0):
        raise ParameterOutOfRange("sandwich constants a and c must be positive")
    if len(V_family) != len(family):
        raise ParameterOutOfRange(f"{len(V_family)} per-theta Lyapunov functions for {len(family)} grid points")
    check_sandwich(V_family, V, a, b, c, d)
    Vt = np.stack([np.asarray(x, dtype=float) for x in V_family])
    At = np.stack([np.asarray(k) @ vt for k, vt in zip(family.kernels, Vt)])
    ratio = max(_drift_proxy_ratio(At[t], Vt[t]) for t in range(len(family)))
    if ratio >= tol.GAMMA_MAX:
        raise InfeasibleDrift(f"individual drift infeasible: ratio {ratio:.6g} at the maximum of V_theta")
    if gamma is not None and not 0 < gamma < 1:
        raise ParameterOutOfRange(f"gamma must lie in (0, 1), got {gamma!r}")
    g, K = _fit_drift_pieces(At, Vt, gamma)
    ind_slack = g * Vt + K - At
    if ind_slack.min() < -tol.DRIFT_TOL:
        raise InfeasibleDrift(f"individual drift with gamma={g} fails by {-ind_slack.min():.3e}")

    r = 1
    while g ** r * c / a >= 1:
        r += 1
        if r > r_max:
            raise NoFeasibleR(f"gamma^r c/a < 1 needs r > {r_max}")
    gamma_r = g ** r * c / a
    K_r = max(0.0, (g ** r * d + K / (1.0 - g) - b) / a)
    fam_r = family if r == 1 else family.power(r)
    prov = {"r": "derived", "gamma_r": "derived", "K_r": "derived",
            "gamma_1": "derived", "K_1": "derived",
            "individual_gamma": "user-supplied" if gamma is not None else "fitted",
            "individual_K": "fitted"}
    drift_r = verify_drift(fam_r, V, gamma_r, K_r, r=r, provenance=prov)
    minor_r = fit_minorization(fam_r, V, drift_r, R)
    cc_r = hm_constants(drift_r, minor_r, alpha0, gamma0, floor_K=True)
    g1 = max(g * c / a, tol.GROWTH_MIN)
    K1 = max(0.0, (g * d + K - b) / a)
    cert = compose_r_step(
        r, drift_r, minor_r, cc_r, g1, K1, _growth_slack(family, V, g1, K1),
        route="individual", provenance=prov | {"alpha_prime": "derived", "C": "derived", "alpha": "derived"},
        individual=(g, K),
    )
    return cert
