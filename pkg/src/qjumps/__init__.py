"""Lindblad dynamics, quantum-jump unravelings and a double-slit cavity model.

Modules
-------
qstate      finite-dimensional operators: eigendecomposition, projectors, states
lindblad    Lindblad generators and the RK4 master-equation integrator
unravel     spectral-step and waiting-time trajectory samplers
doubleslit  grid cavity with a slit barrier and absorbing screen pixels
ensemble    parallel Monte Carlo aggregation and master-equation comparison
cli         command line interface (``qjumps``)
"""

__version__ = "0.1.0"

from .exceptions import (ConfigurationError, DecompositionError, EnsembleError,  # noqa: F401
                         GeometryError, IntegrationError, ModeUnsupportedError,
                         NumericalConsistencyError, QJumpsError, StepSizeError,
                         StructuralError)
from .lindblad import LindbladGenerator, apply_generator, integrate_master  # noqa: F401
from .qstate import Projector, eigendecompose, spectral_decompose  # noqa: F401
from .unravel import (SpectralStep, TrajectoryRecord, WaitingTime,  # noqa: F401
                      run_trajectory_spectral, run_trajectory_waiting)
