"""Exception hierarchy. The CLI maps these onto exit codes."""


class HybridCCNNError(Exception):
    """Base class for all package errors."""


class DataError(HybridCCNNError, ValueError):
    """Malformed, inconsistent or degenerate input data."""


class NumericalError(HybridCCNNError, ArithmeticError):
    """A computation produced non-finite values."""
