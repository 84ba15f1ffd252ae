"""Exception hierarchy shared by all modules."""


class MrfError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(MrfError, ValueError):
    pass


class CapacityError(MrfError):
    """An exhaustive or dense computation would exceed its configured size cap."""


class InvalidDecompositionError(MrfError, ValueError):
    pass


class UnsupportedDecompositionError(MrfError):
    """The requested quantity is not available for this decomposition type."""


class ParseError(MrfError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(MrfError, ArithmeticError):
    pass


class UnderflowError(NumericalError):
    pass


class LineSearchError(NumericalError):
    pass


class SolverAbort(NumericalError):
    """Raised when a driver gives up; ``result`` holds the partial run."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
