"""Exception and warning types raised across the package."""


class DomainError(ValueError):
    """A parameter lies outside its admissible range."""


class DimensionError(ValueError):
    """Matrix or mode dimensions are inconsistent."""


class PhysicalityError(ValueError):
    """A covariance matrix violates the uncertainty principle beyond tolerance."""


class NumericalError(ArithmeticError):
    """An eigen-solve or closed-form evaluation lost too much precision."""


class DegenerateError(ArithmeticError):
    """A quantity needed as a divisor vanished."""


class FactorizationError(ValueError):
    """A covariance matrix could not be factorized for sampling."""


class InsufficientDataError(ValueError):
    """Too few shots to estimate the covariance matrix."""


class DegenerateWarning(UserWarning):
    """Estimated moments carry no information (e.g. all-zero records)."""


class NonMonotonicWarning(UserWarning):
    """A root bracket contains more than one sign change."""
