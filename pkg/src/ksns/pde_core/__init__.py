"""Coupled chemotaxis-fluid time integrator and its spatial operators."""

from .operators import (
    ProjectionError,
    buoyancy_force,
    chemotaxis_flux,
    convective_term,
    project,
    upwind_transport,
    velocity_heat,
)
from .stepper import (
    BlowUpError,
    DIAGNOSTIC_COLUMNS,
    Scenario,
    State,
    Trajectory,
    cfl_limit,
    integrate,
    run,
    step,
)
from .tensor import SensitivityTensor, TensorBoundError, eta_for_layers

__all__ = [
    "BlowUpError",
    "DIAGNOSTIC_COLUMNS",
    "ProjectionError",
    "Scenario",
    "SensitivityTensor",
    "State",
    "TensorBoundError",
    "Trajectory",
    "buoyancy_force",
    "cfl_limit",
    "chemotaxis_flux",
    "convective_term",
    "eta_for_layers",
    "integrate",
    "project",
    "run",
    "step",
    "upwind_transport",
    "velocity_heat",
]
