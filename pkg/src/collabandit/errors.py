"""Exception hierarchy shared across the package."""


class CollabanditError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(CollabanditError, ValueError):
    pass


class DegenerateUpdate(CollabanditError, ArithmeticError):
    """A rank-one update whose Sherman-Morrison denominator is numerically zero."""


class TooFewPoints(CollabanditError, ValueError):
    pass


class ZeroColumn(CollabanditError, ArithmeticError):
    """A similarity column with no positive weight left to normalize."""


class EmptyPool(CollabanditError, ValueError):
    pass


class MalformedEvent(CollabanditError, ValueError):
    pass


class ParseError(CollabanditError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
