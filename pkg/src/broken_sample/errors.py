"""Shared exception types.

Exit-code mapping for the command line tool: ConfigError -> 2,
DegenerateStatisticError -> 3, everything else is a bug.
"""


class BrokenSampleError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(BrokenSampleError):
    """Invalid experiment configuration; message carries the field path."""


class DegenerateStatisticError(BrokenSampleError):
    """A statistic or limit law is degenerate for the given parameters,
    e.g. sqrt(alpha) * lambda_1 >= 1 where invertibility is required."""


class UnsupportedCaseError(BrokenSampleError):
    """A parameter combination outside the implemented scope,
    e.g. multivariate Wasserstein with unequal sample sizes."""
