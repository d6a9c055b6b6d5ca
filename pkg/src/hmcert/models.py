"""Generators for parametric kernel families.

* discretised linear systems x' = A_t x + B_t u with finite noise,
* two-state chains with closed-form invariant measure and Poisson solution,
* random families with a guaranteed common row component,
* a four-state chain that needs two steps before its small set minorizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .certify import _fit_drift_pieces
from .errors import ModelValidationError, ParameterOutOfRange
from .statespace import Lyapunov, Observable, ParametricFamily, StateSpace


class GridTooCoarse(ModelValidationError):
    """Discrete drift constants deviate too far from the continuous ones."""


class UnstableSystem(ModelValidationError):
    pass


def _as_grid(theta_grid) -> np.ndarray:
    g = np.asarray(theta_grid, dtype=float)
    return g[:, None] if g.ndim == 1 else g


def _call(fn, theta: np.ndarray):
    """Evaluate a theta-callable with a scalar for one-dimensional grids."""
    return fn(float(theta[0])) if theta.shape[0] == 1 else fn(theta)


# ---------------------------------------------------------------- linear systems


@dataclass(frozen=True, eq=False)
class LinearSystemSpec:
    """x' = A(theta) x + B(theta) u with u drawn from a finite zero-mean law.

    The state box is ``lower``..``upper`` with ``points`` cell centres per
    axis; V(x) = x^T Q x.
    """

    A_at: Callable
    B_at: Callable
    noise_points: np.ndarray
    noise_probs: np.ndarray
    lower: Sequence[float]
    upper: Sequence[float]
    points: Sequence[int]
    Q: np.ndarray
    theta_grid: np.ndarray
    f_at: Callable | None = None

    def __post_init__(self):
        U = np.asarray(self.noise_points, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        p = np.asarray(self.noise_probs, dtype=float)
        if p.shape != (U.shape[0],) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
            raise ModelValidationError("noise probabilities must be a probability vector over the support points")
        if np.max(np.abs(p @ U)) > 1e-12:
            raise ModelValidationError(f"noise mean {p @ U} is not zero")
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() <= 0:
            raise ModelValidationError("Q must be symmetric positive definite")
        d = Q.shape[0]
        lo, hi = np.atleast_1d(self.lower).astype(float), np.atleast_1d(self.upper).astype(float)
        pts = np.atleast_1d(self.points).astype(int)
        if not (len(lo) == len(hi) == len(pts) == d):
            raise ModelValidationError("box bounds and point counts must match the state dimension")
        if np.any(hi <= lo) or np.any(pts < 2):
            raise ModelValidationError("each axis needs upper > lower and at least two points")
        grid = _as_grid(self.theta_grid)
        for name, val in (("noise_points", U), ("noise_probs", p), ("Q", Q), ("lower", lo),
                          ("upper", hi), ("points", pts), ("theta_grid", grid)):
            object.__setattr__(self, name, val)
        for t, th in enumerate(grid):
            A = self.A(th)
            if A.shape != (d, d):
                raise ModelValidationError(f"A has shape {A.shape}, expected {(d, d)}", location=f"theta[{t}]")
            rho = max(abs(np.linalg.eigvals(A)))
            if rho >= 1:
                raise UnstableSystem(f"spectral radius of A is {rho:.6g}", location=f"theta[{t}]")
            if self.B(th).shape != (d, U.shape[1]):
                raise ModelValidationError("B does not map the noise into the state space", location=f"theta[{t}]")

    def A(self, theta) -> np.ndarray:
        return np.atleast_2d(np.asarray(_call(self.A_at, np.atleast_1d(theta)), dtype=float))

    def B(self, theta) -> np.ndarray:
        return np.atleast_2d(np.asarray(_call(self.B_at, np.atleast_1d(theta)), dtype=float))

    @property
    def noise_cov(self) -> np.ndarray:
        U, p = self.noise_points, self.noise_probs
        return (U * p[:, None]).T @ U

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.points)]

    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def lattice_noise(half_width: float, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Uniform law on the points -half_width, ..., half_width with the given spacing."""
    k = int(round(half_width / spacing))
    pts = spacing * np.arange(-k, k + 1, dtype=float)
    return pts[:, None], np.full(len(pts), 1.0 / len(pts))


def continuous_drift(A, B, Q, S) -> tuple[float, float]:
    """(max generalised eigenvalue of (A^T Q A, Q), tr(B^T Q B S))."""
    A, B, Q, S = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, S))
    gamma = float(linalg.eigh(A.T @ Q @ A, Q, eigvals_only=True).max())
    return gamma, float(np.trace(B.T @ Q @ B @ S))


def dominated_by(A, Q, gamma: float, slack: float = 0.0) -> bool:
    """True when A^T Q A <= gamma Q in the semidefinite order (Cholesky test)."""
    A, Q = np.atleast_2d(A), np.atleast_2d(Q)
    M = gamma * Q - A.T @ Q @ A + slack * np.eye(Q.shape[0])
    try:
        np.linalg.cholesky(M)
        return True
    except np.linalg.LinAlgError:
        return False


def semidefinite_gamma(A, Q, tol: float = 1e-12) -> float:
    """Smallest gamma with A^T Q A <= gamma Q, by bisection on the Cholesky test."""
    A, Q = np.atleast_2d(A), np.atleast_2d(Q)
    lo, hi = 0.0, 1.0
    while not dominated_by(A, Q, hi):
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if dominated_by(A, Q, mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True, eq=False)
class LinearModel:
    family: ParametricFamily
    V: Lyapunov
    centers: np.ndarray
    self_test: tuple[dict, ...]
    flags: tuple[str, ...] = ()

    @property
    def max_deviation(self) -> float:
        return max(t["deviation"] for t in self.self_test)


def _discretise(spec: LinearSystemSpec, theta, centers) -> np.ndarray:
    A, B = spec.A(theta), spec.B(theta)
    n = len(centers)
    step = (spec.upper - spec.lower) / (spec.points - 1)
    P = np.zeros((n, n))
    rows = np.arange(n)
    mean = centers @ A.T
    for u, p in zip(spec.noise_points, spec.noise_probs):
        y = mean + B @ u
        idx = np.clip(np.rint((y - spec.lower) / step), 0, spec.points - 1).astype(int)
        flat = np.ravel_multi_index(tuple(idx.T), tuple(spec.points))
        np.add.at(P, (rows, flat), p)
    return P


def build_linear_family(spec: LinearSystemSpec, max_deviation: float | None = 0.1) -> LinearModel:
    """Nearest-cell discretisation of the linear system on the state box.

    Mass leaving the box is clamped to the edge cells.  Each grid point is
    self-tested: the discrete drift constants (fitted with V = x^T Q x at the
    centres) are compared with the continuous ones and the relative
    deviation recorded; above ``max_deviation`` raises GridTooCoarse.
    """
    centers = spec.centers()
    V = np.einsum("ij,jk,ik->i", centers, spec.Q, centers)
    kernels, tests, obs = [], [], []
    for t, th in enumerate(spec.theta_grid):
        P = _discretise(spec, th, centers)
        kernels.append(P)
        g_c, K_c = continuous_drift(spec.A(th), spec.B(th), spec.Q, spec.noise_cov)
        g_d, K_d = _fit_drift_pieces(P @ V, V)
        dev = max(abs(g_d - g_c) / max(g_c, 1e-12), abs(K_d - K_c) / max(K_c, 1e-12))
        tests.append({"theta_index": t, "gamma_continuous": g_c, "K_continuous": K_c,
                      "gamma_discrete": g_d, "K_discrete": K_d, "deviation": dev})
        if spec.f_at is not None:
            obs.append(np.asarray(spec.f_at(th if len(th) > 1 else float(th[0]), centers), dtype=float))
        if max_deviation is not None and dev > max_deviation:
            raise GridTooCoarse(
                f"discrete drift constants deviate by {dev:.3g} from the continuous ones",
                location=f"theta[{t}]",
            )
    fam = ParametricFamily(spec.theta_grid, tuple(kernels), tuple(obs) if obs else None,
                           StateSpace(len(centers)), name="linear")
    return LinearModel(fam, Lyapunov(V), centers, tuple(tests), ("boundary mass clamped to edge cells",))


def scalar_linear_spec(
    theta_grid, a_at: Callable = lambda t: t, noise=((-1.0,), (1.0,)), probs=(0.5, 0.5),
    box: float = 6.0, points: int = 201, q: float = 1.0, f_at: Callable | None = None,
) -> LinearSystemSpec:
    """One-dimensional x' = a(theta) x + u on [-box, box]."""
    return LinearSystemSpec(
        A_at=lambda t: [[a_at(t)]], B_at=lambda t: [[1.0]],
        noise_points=np.asarray(noise, dtype=float), noise_probs=np.asarray(probs, dtype=float),
        lower=[-box], upper=[box], points=[points], Q=[[q]], theta_grid=theta_grid, f_at=f_at,
    )


# ---------------------------------------------------------------- two-state


def two_state_invariant(p: float, q: float) -> np.ndarray:
    return np.array([q, p]) / (p + q)


def two_state_poisson(p: float, q: float, f) -> tuple[float, np.ndarray]:
    """(h, u) for P = [[1-p, p], [q, 1-q]], centered so that mu*(u) = 0."""
    f0, f1 = (float(x) for x in f)
    s = p + q
    h = (q * f0 + p * f1) / s
    return h, np.array([p * (f0 - f1), -q * (f0 - f1)]) / s ** 2


def _const(x):
    return x if callable(x) else (lambda t, x=x: x)


def build_two_state_family(p_at, q_at, theta_grid, f_at=None) -> ParametricFamily:
    """P_theta = [[1-p, p], [q, 1-q]]; ``p_at``/``q_at``/``f_at`` are callables or constants."""
    grid = _as_grid(theta_grid)
    p_at, q_at = _const(p_at), _const(q_at)
    kernels, obs = [], []
    for t, th in enumerate(grid):
        p, q = float(_call(p_at, th)), float(_call(q_at, th))
        for name, val in (("p", p), ("q", q)):
            if not 0 < val < 1:
                raise ParameterOutOfRange(f"{name}={val} must lie in (0, 1) at theta[{t}]")
        kernels.append([[1 - p, p], [q, 1 - q]])
        if f_at is not None:
            obs.append(np.asarray(_call(_const(f_at), th), dtype=float))
    return ParametricFamily(grid, tuple(kernels), tuple(obs) if obs else None, name="two_state")


# ---------------------------------------------------------------- random minorized


def _grid_position(grid: np.ndarray) -> np.ndarray:
    """Map each grid point to [0, 1] (mean of per-axis normalised coordinates)."""
    span = grid.max(axis=0) - grid.min(axis=0)
    span[span == 0] = 1.0
    return ((grid - grid.min(axis=0)) / span).mean(axis=1)


def build_random_minorized_family(
    n: int, grid, seed: int, alpha_floor: float, with_f: bool = True,
) -> ParametricFamily:
    """Rows alpha_floor * nu + (1 - alpha_floor) * R(theta), R interpolating two random stochastic matrices.

    Every row dominates alpha_floor * nu, so any small set minorizes with
    at least that mass.  Deterministic in ``seed``.
    """
    if not 0 < alpha_floor <= 1:
        raise ParameterOutOfRange(f"alpha_floor={alpha_floor} must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    grid = _as_grid(grid)
    nu = rng.dirichlet(np.ones(n))
    R0 = rng.dirichlet(np.full(n, 0.5), size=n)
    R1 = rng.dirichlet(np.full(n, 0.5), size=n)
    f0, f1 = rng.normal(size=n), rng.normal(size=n)
    kernels, obs = [], []
    for s in _grid_position(grid):
        R = (1 - s) * R0 + s * R1
        P = alpha_floor * nu[None, :] + (1 - alpha_floor) * R
        kernels.append(P / P.sum(axis=1, keepdims=True))
        obs.append((1 - s) * f0 + s * f1)
    return ParametricFamily(grid, tuple(kernels), tuple(obs) if with_f else None, name="random_minorized")


def random_lyapunov(n: int, seed: int, scale: float = 5.0) -> Lyapunov:
    """V with V(0) = 0 and distinct positive values elsewhere."""
    rng = np.random.default_rng(seed + 7919)
    v = np.concatenate([[0.0], scale * rng.uniform(0.2, 1.0, size=n - 1)])
    return Lyapunov(v)


# ---------------------------------------------------------------- rotation


def build_rotation_family(p_at, theta_grid, q: float = 0.5, v: float = 1.0, f_at=None):
    """Four states c1, c2 (V = 0) and o1, o2 (V = v).

    c_i stays with probability 1 - p and otherwise moves to o_i; o_i stays
    with probability q and otherwise jumps to c1 or c2 evenly.  The rows of
    c1 and c2 are disjoint, so {V <= R} does not minorize in one step, but
    two steps mix the two sides.  Returns (family, V).
    """
    grid = _as_grid(theta_grid)
    p_at = _const(p_at)
    kernels, obs = [], []
    for t, th in enumerate(grid):
        p = float(_call(p_at, th))
        if not 0 < p < 1:
            raise ParameterOutOfRange(f"p={p} must lie in (0, 1) at theta[{t}]")
        # state order: c1, c2, o1, o2
        P = np.array([
            [1 - p, 0, p, 0],
            [0, 1 - p, 0, p],
            [(1 - q) / 2, (1 - q) / 2, q, 0],
            [(1 - q) / 2, (1 - q) / 2, 0, q],
        ])
        kernels.append(P)
        if f_at is not None:
            obs.append(np.asarray(_call(_const(f_at), th), dtype=float))
    fam = ParametricFamily(grid, tuple(kernels), tuple(obs) if obs else None,
                           StateSpace(4, ("c1", "c2", "o1", "o2")), name="rotation")
    return fam, Lyapunov([0.0, 0.0, v, v])


def permutation_family(n: int = 2, theta_grid=(0.0,)) -> tuple[ParametricFamily, Lyapunov]:
    """Cyclic shift on n states; periodic, so never minorized."""
    P = np.roll(np.eye(n), 1, axis=1)
    grid = _as_grid(theta_grid)
    return (ParametricFamily(grid, tuple(P for _ in grid), tuple(np.arange(n, dtype=float) for _ in grid),
                             name="permutation"),
            Lyapunov(np.arange(n, dtype=float) / max(n - 1, 1)))


@dataclass(frozen=True, eq=False)
class Generated:
    """Output of a named generator: family, V and optional per-theta V."""

    family: ParametricFamily
    V: Lyapunov
    V_family: tuple[Observable, ...] | None = None
    sandwich: tuple[float, float, float, float] | None = None
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------- named generators


def theta_values(spec) -> np.ndarray:
    """A grid given as a list of points or as {start, stop, num}."""
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as exc:
            raise ParameterOutOfRange(f"theta range needs start, stop and num (missing {exc})") from None
    return np.asarray(spec, dtype=float)


def _affine(base, slope):
    base = np.asarray(base, dtype=float)
    slope = np.asarray(slope, dtype=float)
    return lambda t: base + slope * t


_F_SHAPES = {
    "sin": np.sin,
    "tanh": np.tanh,
    "x": lambda x: x,
}


def _gen_two_state(p0=0.1, p_slope=0.05, q0=0.2, q_slope=0.0, f0=(1.0, 2.0), f_slope=(0.5, -0.5),
                   theta=(0.0, 0.5, 1.0)):
    fam = build_two_state_family(_affine(p0, p_slope), _affine(q0, q_slope), theta_values(theta),
                                 _affine(f0, f_slope))
    return Generated(fam, Lyapunov([0.0, 1.0]))


def _gen_linear(theta=(0.3, 0.45, 0.6), a_scale=1.0, noise="pm1", half_width=3.0, spacing=None,
                box=6.0, points=201, q=1.0, f_shape="sin", f_slope=0.5, max_deviation=0.1,
                individual=None):
    grid = theta_values(theta)
    if noise == "pm1":
        U, p = np.array([[-1.0], [1.0]]), np.array([0.5, 0.5])
    elif noise == "lattice":
        U, p = lattice_noise(half_width, spacing or 2.0 * box / (points - 1))
    else:
        raise ParameterOutOfRange(f"unknown noise type {noise!r}")
    if f_shape not in _F_SHAPES:
        raise ParameterOutOfRange(f"unknown f_shape {f_shape!r}; choose from {sorted(_F_SHAPES)}")
    shape = _F_SHAPES[f_shape]
    spec = scalar_linear_spec(
        grid, a_at=lambda t: a_scale * t, noise=U, probs=p, box=box, points=points, q=q,
        f_at=lambda t, x: (1.0 + f_slope * t) * shape(x[:, 0]),
    )
    lm = build_linear_family(spec, max_deviation)
    meta = {"self_test": list(lm.self_test), "flags": list(lm.flags)}
    if individual is None:
        return Generated(lm.family, lm.V, meta=meta)
    # per-theta quadratic V_theta = q_theta V with q_theta spanning [q_min, q_max]
    q_min, q_max = float(individual.get("q_min", 1.0)), float(individual.get("q_max", 4.0))
    pos = _grid_position(_as_grid(grid))
    V_family = tuple(Observable((q_min + (q_max - q_min) * s) * np.asarray(lm.V)) for s in pos)
    meta["individual_gamma"] = individual.get("gamma")
    return Generated(lm.family, lm.V, V_family, (q_min, 0.0, q_max, 0.0), meta)


def _gen_random_minorized(n=6, seed=0, alpha_floor=0.3, theta=(0.0, 0.25, 0.5, 0.75, 1.0), v_scale=5.0):
    fam = build_random_minorized_family(int(n), theta_values(theta), int(seed), float(alpha_floor))
    return Generated(fam, random_lyapunov(int(n), int(seed), v_scale))


def _gen_rotation(p0=0.25, p_slope=0.1, q=0.5, v=1.0, f0=(1.0, -1.0, 2.0, 0.0), f_slope=(0.2, 0.0, -0.3, 0.1),
                  theta={"start": 0.0, "stop": 1.0, "num": 6}):
    fam, V = build_rotation_family(lambda t: p0 + p_slope * t, theta_values(theta), q, v, _affine(f0, f_slope))
    return Generated(fam, V)


def _gen_permutation(n=2, theta=(0.0,)):
    fam, V = permutation_family(int(n), theta_values(theta))
    return Generated(fam, V)


GENERATORS = {
    "two_state": _gen_two_state,
    "linear": _gen_linear,
    "random_minorized": _gen_random_minorized,
    "rotation": _gen_rotation,
    "permutation": _gen_permutation,
}


def generate(name: str, params: dict | None = None) -> Generated:
    """Build a family from a generator name and keyword parameters."""
    if name not in GENERATORS:
        raise ParameterOutOfRange(f"unknown generator {name!r}; available: {sorted(GENERATORS)}")
    try:
        return GENERATORS[name](**(params or {}))
    except TypeError as exc:
        raise ParameterOutOfRange(f"bad parameters for generator {name!r}: {exc}") from None
