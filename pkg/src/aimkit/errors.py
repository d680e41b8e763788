"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
numeric failures exit 2, file/format problems exit 3.
"""


class AimError(Exception):
    """Base class for all package errors."""


class UsageError(AimError):
    """Caller violated a documented precondition."""

    exit_code = 1


class DimensionError(UsageError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(UsageError):
    """Invalid or inconsistent run configuration."""


class NumericError(AimError):
    """Non-finite values or a diverging computation."""

    exit_code = 2


class PrecisionError(NumericError):
    """Operation requires 64-bit tensors but got 32-bit."""


class FormatError(AimError):
    """Corrupt, truncated or wrong-version file."""

    exit_code = 3
