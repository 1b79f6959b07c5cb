"""Exception types shared across the package.

Each class carries the process exit code the command line maps it to.
"""


class PrewhitenError(Exception):
    exit_code = 1


class ConfigError(PrewhitenError, ValueError):
    exit_code = 2


class DataError(PrewhitenError, ValueError):
    """Malformed or invalid input data.

    ``location`` is an optional ``(row, col)`` tuple (1-based) pointing at
    the offending cell of a matrix file.
    """

    exit_code = 3

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class RankError(DataError):
    def __init__(self, message, column=None, name=None):
        super().__init__(message)
        self.column = column
        self.name = name


class NumericError(PrewhitenError, ArithmeticError):
    exit_code = 4
