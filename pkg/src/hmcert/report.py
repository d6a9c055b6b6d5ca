"""Deterministic JSON/CSV serialisation and the certificate bundle layout."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

FORMULAS = {
    "beta": "alpha0 / K",
    "alpha": "max(1 - (alpha_bar - alpha0), (2 + R beta gamma0) / (2 + R beta))",
    "alpha_minorize": "1 - (alpha_bar - alpha0)",
    "alpha_drift": "(2 + R beta gamma0) / (2 + R beta)",
    "alpha_prime": "max(1 + beta K_1, gamma_1)",
    "C": "alpha_r^-1 alpha_prime^(r-1)",
    "alpha_combined": "alpha_r^(1/r)",
    "L_P": "max over checked pairs and states of rho_beta(P_t(x,.) - P_s(x,.)) / (|t-s| (1 + beta V(x)))",
    "L_f": "max over checked pairs of ||f_t - f_s||_beta / |t-s|",
    "K_f": "max over grid of |||f_t|||_beta",
}


def jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become strings so output stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable({f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)})
    return obj


def dumps(doc: Any) -> str:
    return json.dumps(jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: Path, doc: Any) -> None:
    Path(path).write_text(dumps(doc))


def write_csv(path: Path, header: list[str], rows: Iterable[Iterable[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def fingerprint(obj: Any) -> str:
    """Stable content hash of nested arrays, dataclasses, mappings and scalars."""
    h = hashlib.sha256()

    def feed(o):
        if isinstance(o, np.ndarray) or hasattr(o, "__array__") and not isinstance(o, (str, bytes)) \
                and not dataclasses.is_dataclass(o):
            a = np.ascontiguousarray(np.asarray(o, dtype=float))
            h.update(b"A" + repr(a.shape).encode())
            h.update(a.tobytes())
        elif dataclasses.is_dataclass(o) and not isinstance(o, type):
            h.update(b"D" + type(o).__name__.encode())
            for f in dataclasses.fields(o):
                h.update(f.name.encode())
                feed(getattr(o, f.name))
        elif isinstance(o, dict):
            h.update(b"M")
            for k in sorted(o, key=str):
                h.update(str(k).encode())
                feed(o[k])
        elif isinstance(o, (list, tuple)):
            h.update(b"L%d" % len(o))
            for v in o:
                feed(v)
        else:
            h.update(b"S" + repr(o).encode())

    feed(obj)
    return h.hexdigest()


def constant(value, provenance: str, formula: str | None = None) -> dict[str, Any]:
    out = {"value": value, "provenance": provenance}
    if formula:
        out["formula"] = formula
    return out
