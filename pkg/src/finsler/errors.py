"""Exception hierarchy shared by every layer of the engine."""


class FinslerError(Exception):
    """Base class for all engine errors."""


class DomainError(FinslerError, ValueError):
    """A point lies outside the chart domain (or too close to its boundary)."""


class SlitViolation(DomainError):
    """A tangent vector is zero; Finsler functions are smooth only off the zero section."""


class UnsupportedOrder(FinslerError):
    """A derivative was requested beyond the available jet order."""


class InvalidMetric(FinslerError, ValueError):
    """A user-supplied Finsler function failed registration checks."""


class MetricDegenerate(FinslerError, ArithmeticError):
    """The fundamental tensor is not positive definite."""


class NotConstantCurvature(FinslerError):
    """The curvature tensor does not fit the constant-flag-curvature template."""


class IntegrationUnstable(FinslerError, ArithmeticError):
    """Parallel transport drifted off the level set of F beyond tolerance."""


class ConsistencyFailure(FinslerError, AssertionError):
    """Two independent computations of the same quantity disagree."""


class IndicatrixSolveError(FinslerError, ArithmeticError):
    """Newton iteration for an indicatrix radius did not converge."""


class TangencyError(FinslerError):
    """A vertical field is not tangent to the indicatrix."""


class ConfigError(FinslerError, ValueError):
    """Malformed experiment configuration."""
