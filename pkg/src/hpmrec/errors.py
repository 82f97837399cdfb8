class HPMRecError(Exception):
    """Base class for library errors."""


class ConfigError(HPMRecError, ValueError):
    pass


class DataError(HPMRecError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class EmptyInputError(DataError):
    pass


class FormatError(DataError):
    pass


class NumericalError(HPMRecError, ArithmeticError):
    """Raised when training produces non-finite values."""
