"""Exception hierarchy shared by every module."""

__all__ = [
    "DelayPDError", "StructuralError", "ConfigurationError", "InapplicableError",
    "ProtocolError", "NumericalError", "DivergenceError", "OracleError",
]


class DelayPDError(Exception):
    """Base class for library errors."""


class StructuralError(DelayPDError, ValueError):
    """Dimension mismatch or out-of-range block index."""


class ConfigurationError(DelayPDError, ValueError):
    """Invalid parameters (nonpositive weights, malformed boxes, bad config)."""


class InapplicableError(ConfigurationError):
    """A theoretical bound does not apply to the problem at hand."""


class ProtocolError(DelayPDError, RuntimeError):
    """A delay schedule or local view violates the bounded-delay contract."""


class NumericalError(DelayPDError, ArithmeticError):
    """An inner numerical routine failed to converge."""


class DivergenceError(DelayPDError, ArithmeticError):
    """An iterate became non-finite."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class OracleError(DelayPDError, RuntimeError):
    """The reference-solution oracle failed (test infrastructure problem)."""
