"""Exception hierarchy."""


class CongaError(Exception):
    """Base class for library errors."""


class ConfigurationError(CongaError, ValueError):
    """Invalid input parameters or configuration."""


class DomainError(CongaError, ValueError):
    """Argument outside the admissible domain."""


class GeometryError(CongaError):
    """Invalid or degenerate patch mapping."""


class ConformityError(GeometryError):
    """Patches intersect in a non-conforming way."""


class ConsistencyError(CongaError):
    """Internal consistency check failed."""


class AssemblyError(CongaError):
    """Matrix assembly or factorization failed."""


class NumericalError(CongaError, ArithmeticError):
    """Non-finite values or failed numerical postconditions."""


class SingularMatrixError(NumericalError):
    """Matrix is (numerically) singular."""

    def __init__(self, message, pivot_ratio=None):
        super().__init__(message)
        self.pivot_ratio = pivot_ratio


class IllPosedError(SingularMatrixError):
    """Discrete problem is not well posed (e.g. resonant frequency)."""


class SpectralGapError(NumericalError):
    """No clear spectral gap around the zero threshold."""


class InstabilityError(NumericalError):
    """Time stepping blew up."""


class SolverError(NumericalError):
    """Iterative solver did not converge."""
