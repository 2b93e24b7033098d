"""Exception hierarchy shared by all modules."""


class SaddlescopeError(Exception):
    """Base class for every error raised by the package."""


class StructuralError(SaddlescopeError, ValueError):
    """Incompatible polynomial shapes or malformed inputs."""


class ConfigError(SaddlescopeError, ValueError):
    """Invalid system specification or run configuration."""


class NumericalValidityError(SaddlescopeError, ArithmeticError):
    """A computation left the regime where its result is meaningful."""


class StabilityError(NumericalValidityError):
    """The equilibrium does not have saddle-center-...-center type."""


class SmallDivisorError(NumericalValidityError):
    """A homological denominator fell below the resonance tolerance."""


class ConvergenceError(NumericalValidityError):
    """An iterative solver did not converge."""


class DomainError(NumericalValidityError):
    """An argument lies outside the domain of a closed-form expression."""
