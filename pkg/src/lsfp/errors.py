"""Exception taxonomy shared across the package."""


class LsfpError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(LsfpError):
    """Invalid configuration value; the message names the offending field."""


class StatisticsError(LsfpError):
    """Channel statistics are inconsistent (e.g. a covariance is indefinite)."""


class NumericError(LsfpError):
    """A linear-algebra step failed (singular matrix, failed factorization)."""


class InvariantError(LsfpError):
    """An internal invariant was violated, signalling inconsistent inputs."""


class ConvergenceError(LsfpError):
    """An iterative solver hit its iteration cap before reaching its tolerance.

    Carries the last iterate and residual so callers can degrade gracefully.
    """

    def __init__(self, message, residual=None, iterate=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate
