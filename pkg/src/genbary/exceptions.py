"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class ParseError(ValueError):
    """A point-cloud or config file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(FloatingPointError):
    """A solver produced non-finite values."""


class ConvergenceError(RuntimeError):
    """An iterative routine did not reach its tolerance."""


class TapeError(RuntimeError):
    """A forward tape was reused or does not match the generator."""


class RunFailedError(RuntimeError):
    """Too many optimization steps were aborted."""
