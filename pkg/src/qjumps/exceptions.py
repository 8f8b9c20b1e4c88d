"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`QJumpsError`,
so callers (and the CLI) can separate construction mistakes from numerical
invariant failures.
"""


class QJumpsError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QJumpsError, ValueError):
    """Invalid parameters, geometry or configuration file content."""


class GeometryError(ConfigurationError):
    """Cavity geometry violates its invariants (overlapping slits, ...)."""


class StructuralError(QJumpsError, ValueError):
    """An operator lacks a required structural property (Hermiticity, trace, shape)."""


class NumericalConsistencyError(QJumpsError, ArithmeticError):
    """A computed quantity violates an identity it must satisfy."""


class IntegrationError(NumericalConsistencyError):
    """Invariant violation detected while integrating an ODE."""


class StepSizeError(NumericalConsistencyError):
    """Time step too large for the first-order or projector-valued update."""


class DecompositionError(NumericalConsistencyError):
    """Branch probabilities of a spectral decomposition do not sum to one."""


class ModeUnsupportedError(QJumpsError):
    """The waiting-time sampler's precondition does not hold for this generator."""


class EnsembleError(QJumpsError):
    """A worker failed; ``completed`` lists the trajectory indices that finished."""

    def __init__(self, message, completed=()):
        super().__init__(message)
        self.completed = tuple(completed)
