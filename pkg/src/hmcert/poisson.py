"""Invariant measures and solutions of the Poisson equation (I - P*) u = f - h."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .certify import ContractionConstants, DriftCertificate, RStepCertificate
from .errors import NonConvergence, SingularSystem, ViolatedBound
from .norms import osc_seminorm, sup_norm_beta, weight
from .statespace import ProbabilityMeasure, kernel_power

# Residual and centering guarantees of every returned solution.
SOLUTION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class InvariantMeasure:
    mu_star: ProbabilityMeasure
    iterations: int
    final_sigma_gap: float
    oracle_gap: float
    mean_V: float | None = None

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.mu_star, dtype=dtype)


def stationary_oracle(P) -> np.ndarray:
    """Solve mu (P - I) = 0, sum(mu) = 1 by least squares."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return mu


def invariant_measure(
    kernel,
    V=None,
    beta: float = 1.0,
    tol_sigma: float = 1e-13,
    max_iter: int = 200_000,
    drift: DriftCertificate | None = None,
) -> InvariantMeasure:
    """Fixed point of mu -> mu P by iteration from the uniform start.

    Stops when sigma_beta(mu, mu P) <= tol_sigma.  The result is compared
    with the linear-solve oracle; with a drift certificate attached the
    invariant mean of V is also checked against K/(1-gamma).
    """
    P = np.asarray(kernel, dtype=float)
    n = P.shape[0]
    w = np.ones(n) if V is None else weight(V, beta)
    mu = np.full(n, 1.0 / n)
    gap = np.inf
    for it in range(1, max_iter + 1):
        nxt = mu @ P
        nxt /= nxt.sum()
        gap = float(np.abs(nxt - mu) @ w)
        mu = nxt
        if gap <= tol_sigma:
            break
    else:
        raise NonConvergence(f"power iteration did not reach {tol_sigma:g} in {max_iter} steps", gap=gap)
    oracle = stationary_oracle(P)
    ogap = float(np.max(np.abs(oracle - mu)))
    if ogap > 1e-8:
        raise NonConvergence(f"iterate differs from the linear-solve oracle by {ogap:.3e}", oracle_gap=ogap)
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    mean_V = None
    if V is not None:
        mean_V = float(mu @ np.asarray(V, dtype=float))
        if drift is not None and mean_V > drift.stationary_level + 1e-8:
            raise ViolatedBound(
                f"invariant mean of V {mean_V:.6g} exceeds K/(1-gamma)={drift.stationary_level:.6g}"
            )
    return InvariantMeasure(ProbabilityMeasure(mu), it, gap, ogap, mean_V)


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    """Centered solution u with mu*(u) = 0.

    ``bound`` is the pointwise guarantee on |u| (when certificates were
    supplied) and ``bound_slack = bound - |u|``.
    """

    u: np.ndarray
    h: float
    truncation_n: int
    residual_norm: float
    centering: float
    method: str
    bound: np.ndarray | None = None
    bound_slack: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.u, dtype=dtype)


def _mu(mu_star) -> np.ndarray:
    return np.asarray(mu_star, dtype=float)


def residual(P, u, f, h) -> np.ndarray:
    return u - np.asarray(P) @ u - (np.asarray(f, dtype=float) - h)


def _finalise(P, f, mu, u, h, V, beta, method, n_terms, bound=None, diagnostics=None) -> PoissonSolution:
    res = residual(P, u, f, h)
    w = np.ones(len(u)) if V is None else weight(V, beta)
    res_norm = float(np.max(np.abs(res) / w))
    centering = float(mu @ u)
    if res_norm > SOLUTION_TOL:
        raise NonConvergence(f"{method}: residual {res_norm:.3e} exceeds {SOLUTION_TOL:g}")
    if abs(centering) > SOLUTION_TOL:
        raise NonConvergence(f"{method}: mu*(u) = {centering:.3e}")
    slack = None
    if bound is not None:
        slack = bound - np.abs(u)
        if slack.min() < -SOLUTION_TOL:
            x = int(np.argmin(slack))
            raise ViolatedBound(
                f"{method}: |u(x)| exceeds its guaranteed bound by {-slack.min():.3e}",
                witness={"state": x},
            )
    return PoissonSolution(u, float(h), n_terms, res_norm, centering, method, bound, slack, diagnostics or {})


def u_bound_profile(cc: ContractionConstants, V) -> np.ndarray:
    """U(x) = (2 + beta V(x) + beta K/(1-gamma)) / (1 - alpha)."""
    v = np.asarray(V, dtype=float)
    return (2.0 + cc.beta * v + cc.beta * cc.stationary_level) / (1.0 - cc.alpha)


def k_u_constant(cc: ContractionConstants, drift: DriftCertificate | None = None) -> float:
    """(2 + beta K/(1-gamma)) / (1 - alpha), so ||u||_beta <= K_u |||f|||_beta."""
    level = cc.stationary_level if drift is None else drift.stationary_level
    return (2.0 + cc.beta * level) / (1.0 - cc.alpha)


def poisson_series(
    kernel,
    f,
    mu_star,
    cc: ContractionConstants,
    V,
    tol_tail: float = 1e-10,
    max_terms: int = 2_000_000,
) -> PoissonSolution:
    """u = sum_n (P*^n f - h), truncated once the certified tail is below tol_tail."""
    P = np.asarray(kernel, dtype=float)
    f = np.asarray(f, dtype=float)
    v = np.asarray(V, dtype=float)
    mu = _mu(mu_star)
    beta, alpha = cc.beta, cc.alpha
    h = float(mu @ f)
    osc_f = osc_seminorm(f, v, beta)
    # tail after N terms: osc_f alpha^N (2 + beta V + beta mu*(V)) / (1 - alpha)
    envelope = osc_f * (2.0 + beta * v + beta * float(mu @ v)) / (1.0 - alpha)
    u = np.zeros_like(f)
    term = f.copy()
    n = 0
    scale = 1.0
    while np.max(envelope) * scale >= tol_tail:
        if n >= max_terms:
            raise NonConvergence(f"series not truncated after {max_terms} terms")
        u += term - h
        term = P @ term
        scale *= alpha
        n += 1
    drift_free = u - mu @ u
    bound = osc_f * u_bound_profile(cc, v)
    return _finalise(
        P, f, mu, drift_free, h, v, beta, "series", n, bound,
        {"osc_f": osc_f, "tail_bound": float(np.max(envelope) * scale),
         "raw_centering": float(mu @ u)},
    )


def _periodic(P) -> bool:
    ev = np.linalg.eigvals(P)
    on_circle = np.abs(np.abs(ev) - 1.0) < 1e-9
    return bool(np.any(on_circle & (np.abs(ev - 1.0) > 1e-9)))


def poisson_direct(kernel, f, mu_star, V=None, beta: float = 1.0) -> PoissonSolution:
    """Least-squares solve of (I - P*) u = f - h with the appended row mu*(u) = 0."""
    P = np.asarray(kernel, dtype=float)
    f = np.asarray(f, dtype=float)
    mu = _mu(mu_star)
    n = len(f)
    h = float(mu @ f)
    A = np.vstack([np.eye(n) - P, mu[None, :]])
    rhs = np.append(f - h, 0.0)
    u, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < n:
        raise SingularSystem(f"Poisson system has rank {rank} < {n}; the invariant measure is not unique")
    lsq_res = float(np.max(np.abs(A @ u - rhs)))
    if lsq_res > SOLUTION_TOL:
        raise SingularSystem(f"Poisson system is inconsistent (residual {lsq_res:.3e})")
    flags = ["periodic kernel: outside the certified class"] if _periodic(P) else []
    return _finalise(P, f, mu, u, h, V, beta, "direct", 0, None, {"flags": flags})


def r_step_bound_terms(rcert: RStepCertificate) -> tuple[float, float]:
    """(A, B) with |u(x)| <= |||f||| (A + B V(x)) / (1 - alpha_r) for the r-step solution."""
    r, beta = rcert.r, rcert.beta
    g1, K1 = rcert.gamma_1, rcert.K_1
    gr, Kr = rcert.gamma_r, rcert.K_r
    A = 2 * r + beta * g1 ** r * K1 / (g1 - 1) ** 2 + beta * Kr * r / (1 - gr)
    B = beta * g1 ** r / (g1 - 1)
    return A, B


def r_step_k_constant(rcert: RStepCertificate) -> float:
    """K with |u(x)| <= K |||f|||_beta (1 + beta V(x))."""
    A, B = r_step_bound_terms(rcert)
    return max(A, B / rcert.beta) / (1.0 - rcert.alpha_r)


R_STEP_K_FORMULA = (
    "max(2r + beta gamma_1^r K_1/(gamma_1-1)^2 + beta K_r r/(1-gamma_r), "
    "gamma_1^r/(gamma_1-1)) / (1-alpha_r)"
)


def poisson_r_step(
    kernel,
    rcert: RStepCertificate,
    f,
    mu_star,
    V,
    tol_tail: float = 1e-10,
) -> PoissonSolution:
    """Solve the one-step equation through the r-step one: u = sum_{k<r} P*^k v."""
    P = np.asarray(kernel, dtype=float)
    r = rcert.r
    Pr = P if r == 1 else np.asarray(kernel_power(P, r))
    inner = poisson_series(Pr, f, mu_star, rcert.cc_r, V, tol_tail)
    if r == 1:
        return inner
    v = np.asarray(inner.u)
    u = np.zeros_like(v)
    cur = v.copy()
    for _ in range(r):
        u += cur
        cur = P @ cur
    beta = rcert.beta
    A, B = r_step_bound_terms(rcert)
    osc_f = osc_seminorm(f, V, beta)
    bound = osc_f * (A + B * np.asarray(V, dtype=float)) / (1.0 - rcert.alpha_r)
    sol = _finalise(
        P, f, _mu(mu_star), u, inner.h, V, beta, f"r-step(r={r})", inner.truncation_n, bound,
        {"osc_f": osc_f, "K": r_step_k_constant(rcert), "K_formula": R_STEP_K_FORMULA},
    )
    direct = poisson_direct(P, f, mu_star, V, beta)
    gap = sup_norm_beta(sol.u - direct.u, V, beta)
    if gap > 1e-6:
        raise ViolatedBound(f"r-step solution differs from the direct solve by {gap:.3e}")
    return sol
