"""Exception types shared across the package."""


class BeamlabError(Exception):
    """Base class for all package-specific errors."""


class ConstructionError(BeamlabError, ValueError):
    """Invalid parameters when building a surface, frame, or beam."""


class ChartDomainError(BeamlabError, ValueError):
    """A point lies outside the (extended) chart domain."""


class ResolutionError(BeamlabError, ValueError):
    """A quadrature grid is too coarse for the requested semiclassical h."""


class NumericalError(BeamlabError, RuntimeError):
    """A numerical invariant failed during computation (not user input)."""


class ValidationError(BeamlabError, ValueError):
    """Invalid configuration or CLI input."""
