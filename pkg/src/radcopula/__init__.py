"""Radiomic texture and fractal features, imbalance-aware ensembles and copula survival analysis."""

from .errors import ConvergenceError, DataError, NumericalError, RadCopulaError

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "DataError", "NumericalError", "RadCopulaError", "__version__"]
