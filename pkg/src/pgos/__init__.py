"""Policy-guided outlier synthesis for unsupervised graph OOD detection."""

from .utils import NumericalError, PgosError, StageMismatchError, ValidationError

__version__ = "0.1.0"

__all__ = ["NumericalError", "PgosError", "StageMismatchError", "ValidationError", "__version__"]
