"""Exception types shared across the package."""


class VI2DError(Exception):
    """Base class for all package errors."""


class DimensionError(VI2DError, ValueError):
    """Array shapes do not agree."""


class DomainError(VI2DError, ValueError):
    """A value lies outside the domain an operation accepts."""


class SizeError(VI2DError, ValueError):
    """A size or count is outside the supported range."""


class NumericalError(VI2DError, ArithmeticError):
    """A numerical routine failed (non-convergence, singular system)."""


class ParseError(VI2DError, ValueError):
    """Malformed text input (CSV, config or key-value system files)."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
