"""Exception hierarchy.

Every failure carries enough structure for the CLI to map it to an exit code
and for the JSON report to name the offending assumption.
"""

from __future__ import annotations

from typing import Any


class CertificationError(Exception):
    """Base class for all toolkit failures."""

    assumption: str | None = None

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        out = {"error": type(self).__name__, "message": str(self)}
        if self.assumption:
            out["assumption"] = self.assumption
        if self.details:
            out["details"] = self.details
        return out


class ModelValidationError(CertificationError, ValueError):
    """A model violates a state-space invariant (bad row sum, negative entry, ...)."""

    def __init__(self, message: str, location: str | None = None, **details: Any):
        if location:
            message = f"{location}: {message}"
        super().__init__(message, location=location, **details)
        self.location = location


class DimensionMismatch(ModelValidationError):
    pass


class AssumptionFailure(CertificationError):
    """A structural assumption could not be certified on the supplied grid."""


class InfeasibleDrift(AssumptionFailure):
    assumption = "uniform drift"


class EmptySmallSet(AssumptionFailure):
    assumption = "local minorization"


class ZeroMinorization(AssumptionFailure):
    assumption = "local minorization"


class NoFeasibleR(AssumptionFailure):
    assumption = "r-step drift and minorization"


class SandwichViolated(AssumptionFailure):
    assumption = "individual drift sandwich"


class ParameterOutOfRange(CertificationError, ValueError):
    """A tuning parameter lies outside its admissible open interval."""


class ViolatedBound(CertificationError):
    """An inequality that the certificates guarantee failed numerically.

    ``witness`` identifies where (grid indices, state, test vector).
    """

    def __init__(self, message: str, witness: dict[str, Any] | None = None, **details: Any):
        super().__init__(message, witness=witness or {}, **details)
        self.witness = witness or {}


class NonConvergence(CertificationError):
    pass


class SingularSystem(CertificationError):
    pass


class ConfigError(CertificationError, ValueError):
    """A run configuration is malformed or references unknown options."""
