# errors.py
"""Exception types shared by the simulator modules and mapped to CLI exit codes."""


class OFBMError(Exception):
    """Base class for every error raised on purpose by this package."""


class InvalidInputError(OFBMError, ValueError):
    """Malformed or non-finite input (wrong shape, NaN entries, bad grid)."""


class DomainError(OFBMError, ValueError):
    """Input outside the mathematical domain (r < 0, spectral constraint, σ² ≤ 0)."""


class NumericError(OFBMError, ArithmeticError):
    """A numerical routine failed: eigen iteration, non-PSD covariance."""


class AccuracyError(NumericError):
    """Quadrature error estimate stayed above tolerance after max subdivisions."""


class CapacityError(OFBMError):
    """A requested allocation exceeds the configured resource limit."""


class InvariantViolation(OFBMError, AssertionError):
    """An internal invariant that the type constraints should make impossible."""


# Exit codes used by cli.run
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_VALIDATION = 3
