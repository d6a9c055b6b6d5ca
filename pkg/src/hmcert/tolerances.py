"""Module-wide numerical tolerances.

Every inequality checked by the toolkit is exact mathematics evaluated in
floating point; these constants are the declared slack.  The CLI exposes
them through the ``tolerances`` section of a run config.
"""

from contextlib import contextmanager

ROW_SUM_TOL = 1e-10
PROB_MASS_TOL = 1e-12
ZERO_MASS_TOL = 1e-10
POWER_ROW_SUM_TOL = 1e-9

DRIFT_TOL = 1e-10
MINORIZATION_TOL = 1e-12
CONTRACTION_TOL = 1e-9
LIPSCHITZ_TOL = 1e-10

# Open-interval guards for gamma in (0, 1) and gamma_1 > 1.
GAMMA_MAX = 1.0 - 1e-6
GAMMA_MIN = 1e-6
GROWTH_MIN = 1.0 + 1e-6

# Substitute for K = 0 in beta = alpha0 / K.
K_FLOOR = 1e-12

DEFAULT_R_MARGIN = 0.25
DEFAULT_ALPHA_DD_FACTOR = 1.05

OVERRIDABLE = (
    "ROW_SUM_TOL", "PROB_MASS_TOL", "ZERO_MASS_TOL", "POWER_ROW_SUM_TOL",
    "DRIFT_TOL", "MINORIZATION_TOL", "CONTRACTION_TOL", "LIPSCHITZ_TOL",
)


def current() -> dict[str, float]:
    return {name: globals()[name] for name in OVERRIDABLE}


@contextmanager
def override(values: dict[str, float] | None):
    """Temporarily replace tolerances by name, restoring them on exit."""
    values = dict(values or {})
    for name, v in values.items():
        if name not in OVERRIDABLE:
            raise KeyError(f"unknown tolerance {name!r}")
        if not (isinstance(v, (int, float)) and v > 0):
            raise ValueError(f"tolerance {name} must be positive, got {v!r}")
    saved = current()
    globals().update({k: float(v) for k, v in values.items()})
    try:
        yield
    finally:
        globals().update(saved)
