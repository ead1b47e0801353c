"""Exception types shared across the package.

Each class carries the CLI exit code used when it escapes a command.
"""


class DilError(Exception):
    exit_code = 1


class ConfigError(DilError, ValueError):
    exit_code = 2


class ShapeError(DilError, ValueError):
    exit_code = 2


class DataError(DilError, ValueError):
    exit_code = 3


class NumericError(DilError, FloatingPointError):
    exit_code = 4


class GraphError(DilError, RuntimeError):
    exit_code = 4


class CheckpointError(DilError, ValueError):
    exit_code = 5


class BankError(DilError, IndexError):
    exit_code = 2
