"""Exception hierarchy shared by every module."""


class MixtureError(Exception):
    """Base class for all package errors."""


class ValidationError(MixtureError, ValueError):
    """Input or configuration failed validation."""


class ParameterError(ValidationError):
    """Component parameters violate their family invariants."""


class UnsupportedAlgorithmError(ValidationError):
    """Algorithm / family / M-step combination is not supported."""


class EmptyComponentError(MixtureError):
    """Sufficient statistics carry no mass; caller keeps previous parameters."""


class GenerationError(MixtureError):
    """Synthetic data generation could not reach the requested overlap."""


class NumericalAbort(MixtureError):
    """Training produced non-finite values.

    ``records`` holds every iteration record up to and including the
    offending one so callers can still emit partial metrics.
    """

    def __init__(self, message, records=None, t=None):
        super().__init__(message)
        self.records = list(records or [])
        self.t = t
