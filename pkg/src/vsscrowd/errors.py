"""Exception hierarchy; the CLI maps each family to its own exit code."""


class VsscrowdError(Exception):
    exit_code = 1


class InputError(VsscrowdError):
    """Bad or unreadable input data (files, images, annotations)."""

    exit_code = 3


class DimensionError(InputError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(VsscrowdError, ValueError):
    """Invalid configuration value or combination."""

    exit_code = 4


class ParameterError(ConfigurationError):
    """An argument is outside its allowed range."""


class NumericError(VsscrowdError, ArithmeticError):
    """A computation produced a non-finite value."""

    exit_code = 5
