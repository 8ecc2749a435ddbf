"""Exception hierarchy shared by all modules."""


class DSMRError(Exception):
    """Base class for every error raised by the library."""


class ParameterError(DSMRError, ValueError):
    """Invalid or inadmissible input parameters."""


class DomainError(DSMRError, ValueError):
    """A function was evaluated outside its domain (e.g. at a pole)."""


class AnalysisError(DSMRError):
    """A numerical analysis could not reach a verdict (e.g. non-integer slope)."""


class NumericError(DSMRError, ArithmeticError):
    """Floating point breakdown: non-convergence, loss of definiteness, ..."""


class TruncationError(NumericError):
    """A truncated series or kernel has a tail bound above tolerance."""


class UnsupportedConfigurationError(DSMRError):
    """The requested combination of options is not implemented."""


class MonteCarloError(NumericError):
    """A Monte Carlo path produced a non-finite value."""

    def __init__(self, message, flagged=()):
        super().__init__(message)
        self.flagged = tuple(int(i) for i in flagged)


class ConfigError(ParameterError):
    """A study configuration violates its schema or admissibility rules."""
