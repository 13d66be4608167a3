"""Exception and warning types shared across the package."""


class ZeroflowError(Exception):
    """Base class for package errors."""


class DomainError(ZeroflowError, ValueError):
    """Input lies outside the domain of an operation (e.g. a point at infinity in chart 0)."""


class DiagonalError(ZeroflowError, ValueError):
    """Green's function requested on (numerically) coincident points."""


class ResolutionError(ZeroflowError, RuntimeError):
    """A quadrature or grid is too coarse for the requested tolerance."""


class SmoothnessError(ZeroflowError, RuntimeError):
    """Finite-difference curvature disagrees across step sizes."""


class IterationError(ZeroflowError, RuntimeError):
    """An iterative solver did not converge."""

    def __init__(self, msg, gap=None):
        super().__init__(msg)
        self.gap = gap


class ConfigError(ZeroflowError, ValueError):
    """Invalid experiment configuration."""

    def __init__(self, msg, field=None):
        super().__init__(f"{field}: {msg}" if field else msg)
        self.field = field


class PrecisionWarning(UserWarning):
    """Ill-conditioned linear algebra; an extended precision path was used."""


class ConditioningWarning(UserWarning):
    """Assembled Green matrix does not look conditionally negative definite."""


class CollisionWarning(UserWarning):
    """Potential evaluated at an atom; the truncated kernel was used."""
