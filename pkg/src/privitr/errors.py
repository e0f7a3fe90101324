"""Exception hierarchy shared across the package."""
from __future__ import annotations


class PrivitrError(Exception):
    """Base class for all package-specific failures."""


class DimensionMismatch(PrivitrError):
    """Inputs whose shapes cannot be combined."""


class SingularDesign(PrivitrError):
    """Normal equations are numerically singular (collinear design).

    Carries the condition estimate that tripped the threshold so callers can
    report it.
    """

    def __init__(self, message: str, condition_estimate: float = float("inf")):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class NonConvergence(PrivitrError):
    """An iterative fit stopped at the iteration cap without converging."""


class SeparationDetected(PrivitrError):
    """Quasi-complete separation in a binary treatment model."""


class DegenerateTreatment(PrivitrError):
    """Treatment is (numerically) perfectly predicted; density weights undefined."""


class UnknownBasisFunction(PrivitrError):
    """A basis expression references an unknown column or transform."""


class EmptyCentre(PrivitrError):
    """A pooling strategy was asked to operate on a centre with no subjects."""


class PoolSizeExceedsCentre(PrivitrError):
    """Requested pool size is larger than the centre it applies to."""


class FingerprintMismatch(PrivitrError):
    """Site summaries were built against different design contracts."""


class DuplicateSite(PrivitrError):
    """The same site id contributed more than one summary."""


class MalformedSummary(PrivitrError):
    """A serialized site summary could not be parsed or failed validation."""


class FingerprintMissing(PrivitrError):
    """A serialized site summary carries no design fingerprint."""


class NonPositiveCovariate(PrivitrError):
    """Outcome generation needs strictly positive covariates (log is taken)."""


class ConfigMissing(PrivitrError):
    """A required configuration block (e.g. generator coefficients) is absent."""


class MissingReferenceRow(PrivitrError):
    """A report row has no counterpart in the reference table."""
