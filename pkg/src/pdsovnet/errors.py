"""Exception types shared across the package.

The CLI maps ``ConfigError``, ``DataError`` and ``ProtocolError`` to exit code 2.
"""


class ConfigError(ValueError):
    """Invalid configuration (bad flags, split maps, hyperparameters)."""


class DataError(ValueError):
    """Input data violates a shape or physical-consistency contract."""


class ProtocolError(RuntimeError):
    """An experiment step was requested without its protocol prerequisite."""
