"""Exception hierarchy for sepspike."""

from __future__ import annotations


class SepspikeError(Exception):
    """Base class for every error raised by this package."""


class NegativePerturbation(SepspikeError, ValueError):
    pass


class DimensionMismatch(SepspikeError, ValueError):
    pass


class InvalidSpectrum(SepspikeError, ValueError):
    pass


class NoConvergence(SepspikeError, RuntimeError):
    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class InvalidPoint(SepspikeError, ValueError):
    pass


class EdgeNotFound(SepspikeError, RuntimeError):
    pass


class OutOfWindow(SepspikeError, ValueError):
    pass


class BelowEdge(SepspikeError, ValueError):
    pass


class QuantileOutOfRange(SepspikeError, ValueError):
    pass


class SingularDenominator(SepspikeError, ZeroDivisionError):
    pass


class LabelNotOutlier(SepspikeError, ValueError):
    pass


class RngFailure(SepspikeError, RuntimeError):
    pass


class DecompositionFailure(SepspikeError, RuntimeError):
    pass


class IndexOutOfRange(SepspikeError, IndexError):
    pass


class InsufficientResamples(SepspikeError, ValueError):
    pass


class MissingVectors(SepspikeError, ValueError):
    pass


class MissingBases(SepspikeError, ValueError):
    pass


class DivergentSum(SepspikeError, ZeroDivisionError):
    pass


class NotIsotropicBase(SepspikeError, ValueError):
    pass


class ConfigError(SepspikeError, ValueError):
    """Malformed or unknown configuration content."""


class UsageError(SepspikeError, ValueError):
    """Bad command-line invocation."""
