"""Exception types raised across the package."""


class UnitCFError(Exception):
    """Base class for package errors."""


class InvalidArgument(UnitCFError, ValueError):
    pass


class NumericOverflow(UnitCFError, ArithmeticError):
    """An exponent left the representable range.

    ``location`` holds the offending ``(unit, coordinate)`` pair when known.
    """

    def __init__(self, message, location=None, trace=None):
        super().__init__(message)
        self.location = location
        self.trace = trace


class NumericUnderflow(UnitCFError, ArithmeticError):
    pass


class UnsupportedDimension(UnitCFError, ValueError):
    pass


class GenerationFailure(UnitCFError, RuntimeError):
    def __init__(self, message, best_kappa=None):
        super().__init__(message)
        self.best_kappa = best_kappa
