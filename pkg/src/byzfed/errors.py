"""Exception types shared across the package.

The CLI maps ConfigError to exit code 1 and every other ByzfedError
(and unexpected exceptions) to exit code 2.
"""


class ByzfedError(Exception):
    """Base class for package errors."""


class ConfigError(ByzfedError, ValueError):
    """Invalid configuration or invalid argument combination."""


class DataError(ByzfedError, RuntimeError):
    """Input data cannot be processed (ingestion, empty pools, etc.)."""


class ClusteringError(DataError):
    """Clustering produced no usable clusters."""


class NumericError(ByzfedError, ArithmeticError):
    """Numerical failure such as divergence of an iterative solver."""
