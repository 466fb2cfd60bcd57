"""Shared exception types.

Everything user-facing raises one of these (or a stdlib error where that is
the established idiom) so the CLI can map failures onto exit codes: config
and usage problems exit 2, runtime failures exit 1.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible; message names both shapes."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown configuration key."""


class DataError(ValueError):
    """Malformed input data (CSV parse problems, degenerate series, ...)."""


class NumericError(ArithmeticError):
    """Non-finite value where a finite one is required; message names the stage."""


class TapeError(RuntimeError):
    """Misuse of the autodiff tape (e.g. backward with nothing recorded)."""


class CheckpointError(RuntimeError):
    """Checkpoint file is corrupt, truncated, or does not match the model."""
