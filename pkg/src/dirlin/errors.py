"""Exception types raised across the package."""


class DirlinError(Exception):
    """Base class for package errors."""


class DomainError(DirlinError, ValueError):
    """An argument lies outside the domain of a numerical routine."""


class DegenerateData(DirlinError, ValueError):
    """The data carry no usable variation (constant values, identical directions)."""


class DegenerateOrientation(DirlinError, ValueError):
    """A point cloud has no preferred principal axis."""


class NonFiniteObjective(DirlinError, ArithmeticError):
    """A bandwidth objective could not be evaluated to a finite number."""


class SchemaError(DomainError):
    """Malformed input file; ``line`` is the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
