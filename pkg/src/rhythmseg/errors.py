"""Exception types shared across the package.

Each error carries a short machine-readable ``code`` which the CLI prints
before the human-readable detail.
"""


class RhythmSegError(Exception):
    code = "ERROR"
    exit_status = 1


class ConfigurationError(RhythmSegError, ValueError):
    code = "CONFIG_ERROR"
    exit_status = 2


class DimensionError(RhythmSegError, ValueError):
    """Shape mismatch. ``axis`` names the offending axis ("time", "channels", ...)."""

    code = "DIMENSION_ERROR"
    exit_status = 3

    def __init__(self, message, axis=None):
        super().__init__(message if axis is None else f"{message} (axis: {axis})")
        self.axis = axis


class DataError(RhythmSegError, ValueError):
    code = "DATA_ERROR"
    exit_status = 3


class InputError(DataError):
    code = "INPUT_ERROR"


class ContractError(RhythmSegError, ValueError):
    code = "CONTRACT_ERROR"
    exit_status = 2


class NumericError(RhythmSegError, ArithmeticError):
    code = "NUMERIC_ERROR"
    exit_status = 4
