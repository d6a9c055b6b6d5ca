"""Exact minimisation of a maximum of affine functions on an interval."""

from __future__ import annotations

import numpy as np


def upper_envelope(slopes, intercepts):
    """Lines of the upper envelope, ordered by increasing slope.

    Returns (slopes, intercepts, breakpoints) where ``breakpoints[k]`` is the
    abscissa at which hull line k hands over to hull line k+1.
    """
    a = np.asarray(slopes, dtype=float).ravel()
    b = np.asarray(intercepts, dtype=float).ravel()
    if a.shape != b.shape or a.size == 0:
        raise ValueError("need a nonempty, equal-length set of slopes and intercepts")
    order = np.lexsort((b, a))
    a, b = a[order], b[order]
    # equal slopes: the last one (largest intercept) dominates
    keep = np.append(a[1:] != a[:-1], True)
    a, b = a[keep], b[keep]

    hull: list[int] = []
    for k in range(len(a)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # j is useless if k overtakes i no later than j does
            if (b[k] - b[i]) * (a[j] - a[i]) >= (b[j] - b[i]) * (a[k] - a[i]):
                hull.pop()
            else:
                break
        hull.append(k)
    ha, hb = a[hull], b[hull]
    brk = (hb[:-1] - hb[1:]) / (ha[1:] - ha[:-1])
    return ha, hb, brk


def minimize_max_affine(slopes, intercepts, lo: float, hi: float) -> tuple[float, float]:
    """Smallest minimiser of ``max_i (slopes[i] * x + intercepts[i])`` over [lo, hi].

    The objective is convex and piecewise linear, so the unconstrained smallest
    minimiser sits at the breakpoint entering the first envelope piece with
    nonnegative slope; clamping it to the interval gives the constrained one.
    """
    if not lo <= hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    a = np.asarray(slopes, dtype=float).ravel()
    b = np.asarray(intercepts, dtype=float).ravel()
    ha, _, brk = upper_envelope(a, b)
    j = int(np.searchsorted(ha, 0.0, side="left"))
    if j == 0:
        x = lo
    elif j == len(ha):
        x = hi
    else:
        x = float(np.clip(brk[j - 1], lo, hi))
    return x, float(np.max(a * x + b))
