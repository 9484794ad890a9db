"""Exception types shared by all chiralxfer modules."""


class ChiralXferError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(ChiralXferError, ValueError):
    """A Hilbert-space dimension or layout is unusable."""


class InvalidParameterError(ChiralXferError, ValueError):
    """A physical parameter lies outside its allowed range."""


class NumericalDomainError(ChiralXferError, ArithmeticError):
    """Input to a numerical routine violates its mathematical domain."""


class SingularPointError(NumericalDomainError):
    """A quantity is evaluated where it is singular (for example kappa = 0)."""


class AccuracyError(ChiralXferError, ArithmeticError):
    """A quadrature or convergence check did not reach its target."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ConfigurationError(ChiralXferError, ValueError):
    """A network, code or experiment configuration is inconsistent."""


class IntegrationError(ChiralXferError, RuntimeError):
    """Time integration produced a state violating its invariants."""
