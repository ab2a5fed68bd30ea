"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class RadCopulaError(Exception):
    pass


class DataError(RadCopulaError, ValueError):
    """Malformed, missing or otherwise unusable input data."""


class NumericalError(RadCopulaError, ArithmeticError):
    """An estimator failed to produce a usable result."""


class ConvergenceError(NumericalError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
