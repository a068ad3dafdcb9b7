"""Exception types raised by the planner."""


class RedpgError(Exception):
    """Base class for all planner errors."""


class InputError(RedpgError, ValueError):
    """Malformed arguments: wrong dimensions, invalid ranges."""


class NumericalError(RedpgError, ArithmeticError):
    """A computation produced non-finite or singular values."""


class SolverError(RedpgError):
    """An iterative solver failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class GenerationError(RedpgError):
    """Random scenario generation could not satisfy its constraints."""


class ConfigError(RedpgError):
    """Configuration file failed to parse or validate."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.key = key
        self.line = line
