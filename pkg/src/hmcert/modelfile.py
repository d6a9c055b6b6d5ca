"""YAML model files.

A model file either names a generator::

    generator: two_state
    params: {p0: 0.1, p_slope: 0.05}

or spells the family out::

    name: example
    states: 2
    labels: [a, b]            # optional, unique
    theta: [0.0, 0.5, 1.0]    # scalars, lists of coordinates, or {start, stop, num}
    kernels:                  # one dense row-stochastic matrix per theta point
      - [[0.9, 0.1], [0.2, 0.8]]
      - ...
    V: [0.0, 1.0]
    f: [1.0, 2.0]             # one vector shared by all points, or one per point
    V_family: [...]           # optional per-point Lyapunov functions
    sandwich: {a: 1, b: 0, c: 4, d: 0}   # required with V_family
    individual_gamma: 0.8     # optional

Validation stops at the first violated invariant and reports where it is.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError, ModelValidationError
from .models import Generated, generate, theta_values
from .statespace import Kernel, Lyapunov, Observable, ParametricFamily, StateSpace


def _require(doc: dict, key: str):
    if key not in doc:
        raise ConfigError(f"model file is missing required key {key!r}")
    return doc[key]


def _matrix(value, where: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ModelValidationError("entries must be numbers in equal-length rows", location=where) from None
    return arr


def parse_model(doc: Any) -> Generated:
    if not isinstance(doc, dict):
        raise ConfigError("model document must be a mapping")
    if "generator" in doc:
        params = doc.get("params") or {}
        if not isinstance(params, dict):
            raise ConfigError("generator params must be a mapping")
        return generate(str(doc["generator"]), params)

    n = _require(doc, "states")
    if not isinstance(n, int) or n < 1:
        raise ModelValidationError(f"states must be a positive integer, got {n!r}", location="states")
    space = StateSpace(n, doc.get("labels"))
    grid = theta_values(_require(doc, "theta"))
    if grid.ndim == 1:
        grid = grid[:, None]
    raw = _require(doc, "kernels")
    if not isinstance(raw, list) or len(raw) != len(grid):
        raise ModelValidationError(f"expected {len(grid)} kernels, one per theta point", location="kernels")
    kernels = []
    for t, k in enumerate(raw):
        where = f"kernels[{t}]"
        P = _matrix(k, where)
        if P.shape != (n, n):
            raise ModelValidationError(f"shape {P.shape} != ({n}, {n})", location=where)
        try:
            kernels.append(Kernel(P))
        except ModelValidationError as exc:
            raise ModelValidationError(str(exc), location=where) from None

    V_arr = _matrix(_require(doc, "V"), "V")
    if V_arr.shape != (n,):
        raise ModelValidationError(f"V has shape {V_arr.shape}, expected ({n},)", location="V")
    V = Lyapunov(V_arr)

    obs = None
    if "f" in doc:
        F = _matrix(doc["f"], "f")
        if F.shape == (n,):
            F = np.broadcast_to(F, (len(grid), n))
        if F.shape != (len(grid), n):
            raise ModelValidationError(f"f has shape {F.shape}; expected ({n},) or ({len(grid)}, {n})", location="f")
        obs = tuple(Observable(row) for row in F)

    fam = ParametricFamily(grid, tuple(kernels), obs, space, name=str(doc.get("name", "")))

    V_family = sandwich = None
    meta: dict[str, Any] = {}
    if "V_family" in doc:
        Vf = _matrix(doc["V_family"], "V_family")
        if Vf.shape != (len(grid), n):
            raise ModelValidationError(f"V_family has shape {Vf.shape}, expected ({len(grid)}, {n})", location="V_family")
        for t, row in enumerate(Vf):
            try:
                Lyapunov(row)
            except ModelValidationError as exc:
                raise ModelValidationError(str(exc), location=f"V_family[{t}]") from None
        V_family = tuple(Observable(row) for row in Vf)
        sw = _require(doc, "sandwich")
        try:
            sandwich = tuple(float(sw[k]) for k in "abcd")
        except (KeyError, TypeError, ValueError):
            raise ConfigError("sandwich needs numeric a, b, c, d") from None
        if doc.get("individual_gamma") is not None:
            meta["individual_gamma"] = float(doc["individual_gamma"])
    return Generated(fam, V, V_family, sandwich, meta)


def load_model(path: str | Path) -> Generated:
    """Read and validate a model file.  I/O failures propagate as OSError."""
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return parse_model(doc)


def model_document(gen: Generated, name: str = "") -> dict[str, Any]:
    """Explicit (generator-free) document for a family; round-trips through parse_model."""
    fam = gen.family
    doc: dict[str, Any] = {"name": name or fam.name, "states": fam.n_states}
    if fam.space.labels is not None:
        doc["labels"] = list(fam.space.labels)
    grid = fam.theta_grid
    doc["theta"] = grid[:, 0].tolist() if grid.shape[1] == 1 else grid.tolist()
    doc["kernels"] = [np.asarray(k).tolist() for k in fam.kernels]
    doc["V"] = np.asarray(gen.V).tolist()
    if fam.observables is not None:
        doc["f"] = [np.asarray(f).tolist() for f in fam.observables]
    if gen.V_family is not None:
        doc["V_family"] = [np.asarray(v).tolist() for v in gen.V_family]
        doc["sandwich"] = dict(zip("abcd", gen.sandwich))
        if gen.meta.get("individual_gamma") is not None:
            doc["individual_gamma"] = gen.meta["individual_gamma"]
    return doc


def dump_model(gen: Generated, path: str | Path, name: str = "") -> None:
    Path(path).write_text(yaml.safe_dump(model_document(gen, name), sort_keys=False))
