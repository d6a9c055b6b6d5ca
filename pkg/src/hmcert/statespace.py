"""Finite state spaces, measures, observables and parametric kernel families.

All value types are frozen dataclasses around read-only numpy arrays and
implement ``__array__``, so every numerical routine in the package accepts
either the typed object or a plain array.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tolerances as tol
from .errors import DimensionMismatch, ModelValidationError


def _frozen(values, name: str, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ModelValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
        raise ModelValidationError(f"{name} has a non-finite entry", location=f"{name}{list(bad)}")
    arr.flags.writeable = False
    return arr


class _ArrayBacked:
    _field = "values"

    def __array__(self, dtype=None, copy=None):
        arr = getattr(self, self._field)
        if dtype is not None:
            arr = arr.astype(dtype)
        return np.array(arr, copy=True) if copy else arr

    def __len__(self):
        return len(getattr(self, self._field))


@dataclass(frozen=True)
class StateSpace:
    n: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ModelValidationError(f"state count must be a positive integer, got {self.n!r}")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != self.n:
                raise ModelValidationError(f"{len(labels)} labels for {self.n} states")
            if len(set(labels)) != len(labels):
                dup = next(s for s in labels if labels.count(s) > 1)
                raise ModelValidationError(f"duplicate state label {dup!r}")
            object.__setattr__(self, "labels", labels)


@dataclass(frozen=True, eq=False)
class Measure(_ArrayBacked):
    """Nonnegative finite measure."""

    weights: np.ndarray
    _field = "weights"

    def __post_init__(self):
        w = _frozen(self.weights, "measure", 1)
        if np.any(w < 0):
            i = int(np.argmin(w))
            raise ModelValidationError(f"negative weight {w[i]}", location=f"measure[{i}]")
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def integrate(self, phi) -> float:
        return float(self.weights @ np.asarray(phi, dtype=float))


class ProbabilityMeasure(Measure):
    def __post_init__(self):
        super().__post_init__()
        if abs(self.weights.sum() - 1.0) > tol.PROB_MASS_TOL:
            raise ModelValidationError(f"probability weights sum to {self.weights.sum()!r}")

    @classmethod
    def dirac(cls, n: int, i: int) -> "ProbabilityMeasure":
        w = np.zeros(n)
        w[i] = 1.0
        return cls(w)

    @classmethod
    def uniform(cls, n: int) -> "ProbabilityMeasure":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True, eq=False)
class SignedMeasure(_ArrayBacked):
    weights: np.ndarray
    _field = "weights"

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights, "signed measure", 1))

    @property
    def total_variation(self) -> Measure:
        """The measure |eta|."""
        return Measure(np.abs(self.weights))

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def integrate(self, phi) -> float:
        return float(self.weights @ np.asarray(phi, dtype=float))

    @classmethod
    def difference(cls, mu1, mu2) -> "SignedMeasure":
        return cls(np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float))


@dataclass(frozen=True, eq=False)
class Observable(_ArrayBacked):
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, "observable", 1))


@dataclass(frozen=True, eq=False)
class Lyapunov(_ArrayBacked):
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values, "V", 1)
        if np.any(v < 0):
            i = int(np.argmin(v))
            raise ModelValidationError(f"Lyapunov value {v[i]} is negative", location=f"V[{i}]")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class Kernel(_ArrayBacked):
    """Row-stochastic transition matrix; ``rows[i]`` is P(x_i, .)."""

    rows: np.ndarray
    _field = "rows"
    row_tol: float | None = field(default=None, repr=False)

    def __post_init__(self):
        P = _frozen(self.rows, "kernel", 2)
        n, m = P.shape
        if n != m:
            raise ModelValidationError(f"kernel must be square, got {P.shape}")
        neg = np.argwhere(P < 0)
        if len(neg):
            i, j = (int(k) for k in neg[0])
            raise ModelValidationError(f"negative entry {P[i, j]}", location=f"row {i}, entry {j}")
        row_tol = tol.ROW_SUM_TOL if self.row_tol is None else self.row_tol
        dev = np.abs(P.sum(axis=1) - 1.0)
        if np.any(dev > row_tol):
            i = int(np.argmax(dev > row_tol))
            raise ModelValidationError(f"row sums to {P[i].sum()!r}", location=f"row {i}")
        object.__setattr__(self, "rows", P)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def identity(cls, n: int) -> "Kernel":
        return cls(np.eye(n))


def _check_dims(n: int, m: int, what: str):
    if n != m:
        raise DimensionMismatch(f"{what}: kernel has {n} states, argument has {m}")


def push_measure(kernel, mu):
    """Left action mu -> mu P.  Returns the same kind of object it is given."""
    P = np.asarray(kernel, dtype=float)
    w = np.asarray(mu, dtype=float)
    _check_dims(P.shape[0], w.shape[-1], "push_measure")
    out = w @ P
    if isinstance(mu, ProbabilityMeasure):
        # renormalise away rounding so the result stays a valid probability vector
        return ProbabilityMeasure(out / out.sum())
    if isinstance(mu, Measure):
        return Measure(np.clip(out, 0.0, None))
    if isinstance(mu, SignedMeasure):
        return SignedMeasure(out)
    return out


def apply_function(kernel, phi):
    """Right action (P* phi)(x) = sum_y P(x, y) phi(y)."""
    P = np.asarray(kernel, dtype=float)
    v = np.asarray(phi, dtype=float)
    _check_dims(P.shape[1], v.shape[0], "apply_function")
    out = P @ v
    if isinstance(phi, Lyapunov):
        return Lyapunov(np.clip(out, 0.0, None))
    if isinstance(phi, Observable):
        return Observable(out)
    return out


def kernel_power(kernel, m: int) -> Kernel:
    if int(m) != m or m < 0:
        raise ValueError(f"power must be a nonnegative integer, got {m!r}")
    P = np.asarray(kernel, dtype=float)
    out = np.linalg.matrix_power(P, int(m)) if m else np.eye(P.shape[0])
    return Kernel(out, row_tol=tol.POWER_ROW_SUM_TOL)


@dataclass(frozen=True, eq=False)
class ParametricFamily:
    """Kernels (and optional observables f_theta) indexed by an explicit theta grid.

    ``theta_grid`` has shape (m, k): m grid points in R^k.  Kernels and
    observables are stored in grid order.
    """

    theta_grid: np.ndarray
    kernels: tuple[Kernel, ...]
    observables: tuple[Observable, ...] | None = None
    space: StateSpace | None = None
    name: str = ""

    def __post_init__(self):
        grid = np.array(self.theta_grid, dtype=float, copy=True)
        if grid.ndim == 1:
            grid = grid[:, None]
        if grid.ndim != 2 or grid.shape[0] == 0:
            raise ModelValidationError("theta grid must be a nonempty list of points")
        grid.flags.writeable = False
        object.__setattr__(self, "theta_grid", grid)
        kernels = tuple(k if isinstance(k, Kernel) else Kernel(k) for k in self.kernels)
        if len(kernels) != grid.shape[0]:
            raise ModelValidationError(f"{len(kernels)} kernels for {grid.shape[0]} grid points")
        n = kernels[0].n
        for t, k in enumerate(kernels):
            if k.n != n:
                raise DimensionMismatch(f"kernel {t} has {k.n} states, expected {n}", location=f"theta[{t}]")
        object.__setattr__(self, "kernels", kernels)
        if self.observables is not None:
            obs = tuple(f if isinstance(f, Observable) else Observable(f) for f in self.observables)
            if len(obs) != len(kernels):
                raise ModelValidationError(f"{len(obs)} observables for {len(kernels)} grid points")
            for t, f in enumerate(obs):
                if len(f) != n:
                    raise DimensionMismatch(f"f has {len(f)} entries, expected {n}", location=f"f[{t}]")
            object.__setattr__(self, "observables", obs)
        space = self.space if self.space is not None else StateSpace(n)
        if space.n != n:
            raise DimensionMismatch(f"state space has {space.n} states, kernels have {n}")
        object.__setattr__(self, "space", space)

    def __len__(self):
        return self.theta_grid.shape[0]

    @property
    def n_states(self) -> int:
        return self.kernels[0].n

    def _index(self, theta) -> int:
        if isinstance(theta, (int, np.integer)):
            return int(theta)
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        hit = np.flatnonzero(np.all(np.isclose(self.theta_grid, t, rtol=0, atol=1e-12), axis=1))
        if not len(hit):
            raise KeyError(f"theta {theta!r} is not on the grid")
        return int(hit[0])

    def kernel_at(self, theta) -> Kernel:
        """Kernel at a grid index (int) or grid point (array-like)."""
        return self.kernels[self._index(theta)]

    def f_at(self, theta) -> Observable:
        if self.observables is None:
            raise ValueError("family has no observables f_theta")
        return self.observables[self._index(theta)]

    def power(self, r: int) -> "ParametricFamily":
        return ParametricFamily(
            self.theta_grid,
            tuple(kernel_power(k, r) for k in self.kernels),
            self.observables,
            self.space,
            name=f"{self.name}^{r}" if self.name else "",
        )

    def subfamily(self, indices: Sequence[int]) -> "ParametricFamily":
        idx = list(indices)
        return ParametricFamily(
            self.theta_grid[idx],
            tuple(self.kernels[i] for i in idx),
            None if self.observables is None else tuple(self.observables[i] for i in idx),
            self.space,
            name=self.name,
        )

    def grid_hash(self) -> str:
        return grid_hash(self.theta_grid)


def grid_hash(theta_grid) -> str:
    grid = np.ascontiguousarray(np.asarray(theta_grid, dtype=float))
    h = hashlib.sha256(repr(grid.shape).encode())
    h.update(grid.tobytes())
    return h.hexdigest()[:16]


def theta_distance(t1, t2) -> float:
    """Euclidean distance on the parameter space."""
    return float(np.linalg.norm(np.atleast_1d(t1) - np.atleast_1d(t2)))
