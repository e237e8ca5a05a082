"""Exceptions raised by conekit."""


class ConekitError(Exception):
    """Base class for all conekit errors."""


class ParameterError(ConekitError, ValueError):
    """A numerical parameter is outside its admissible range."""


class ChartError(ConekitError):
    """A point is not in the domain of a singular chart."""


class StencilError(ConekitError):
    """A grid cannot support the finite-difference stencil."""


class VanishingError(ConekitError):
    """A field does not vanish on the divisor within tolerance."""


class SolverError(ConekitError):
    """A linear solve or fixed-point iteration did not converge."""


class DichotomyError(ConekitError):
    """The exponent pair sits on the excluded boundary a'b = 1 - 2b."""


class QuadratureError(ConekitError):
    """Quadrature produced a non-finite value."""


class GluingError(ConekitError):
    """No admissible gluing parameters were found."""

    def __init__(self, message, diagnostics=None):
        super(GluingError, self).__init__(message)
        self.diagnostics = diagnostics or {}


class PositivityError(ConekitError):
    """A Hermitian form failed to be positive definite."""

    def __init__(self, message, location=None, margin=None):
        super(PositivityError, self).__init__(message)
        self.location = location
        self.margin = margin


class ConditioningError(ConekitError):
    """A matrix inversion or least-squares fit is ill-conditioned."""


class ConfigError(ConekitError):
    """Invalid configuration."""
