"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto its exit codes: configuration problems exit with 2,
numeric failures (including stalled flows) with 3, failed invariants with 4.
"""


class SigmaflowError(Exception):
    """Base class for all library errors."""


class ConfigError(SigmaflowError, ValueError):
    """Invalid configuration, dataset layout or parameter value."""


class DomainError(SigmaflowError, ValueError):
    """Argument outside the domain of a numerical function."""


class UnsupportedOperationError(SigmaflowError, NotImplementedError):
    """Operation not available for the selected kernel family."""


class DegenerateCovarianceError(SigmaflowError, ValueError):
    """Sample covariance is rank deficient and repair is disabled."""

    def __init__(self, message, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions


class NumericError(SigmaflowError, ArithmeticError):
    """Non-finite values or a failed factorization."""


class PSDViolationError(NumericError):
    """A step left the positive semidefinite cone beyond tolerance."""


class StalledFlowError(NumericError):
    """Backtracking could not find a step that decreases the loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConsistencyError(SigmaflowError, AssertionError):
    """Two routes to the same quantity disagree beyond tolerance."""
