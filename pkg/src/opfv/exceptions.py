"""Exception hierarchy."""


class OPFVError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(OPFVError, ValueError):
    """Invalid configuration or hyperparameter."""


class DomainError(OPFVError, ValueError):
    """A timestamp lies outside the domain of a time-feature function."""


class SupportError(OPFVError, ValueError):
    """A support condition needed by an estimator is violated.

    Raised when the target time's feature has zero probability under the
    logging-time distribution, or when a period/bucket required by an
    estimator contains no data.
    """


class NumericError(OPFVError, ArithmeticError):
    """Non-finite values or an unsolvable linear system."""
