"""Shared exception hierarchy.

The CLI maps these to exit codes: 1 for usage/config problems, 2 for
data problems, 3 for numeric failures.
"""


class SeqtagError(Exception):
    exit_code = 1


class ConfigError(SeqtagError):
    """Invalid configuration or command usage."""

    exit_code = 1


class DataError(SeqtagError):
    """Malformed or missing input data."""

    exit_code = 2


class NumericError(SeqtagError):
    """Non-finite values or other numeric breakdown."""

    exit_code = 3


class ShapeError(NumericError):
    """Tensor shape mismatch while building or running a graph."""
