"""Astrocyte calcium-field simulation coupled to gated classifier training."""

__version__ = "0.1.0"

from .backend import active_backend
from .lattice import AstrocyteGraph, build_lattice, weighted_laplacian
from .simulate import (
    NetworkState,
    NumericDivergenceError,
    SimParams,
    Trajectory,
    TransmitterSchedule,
    run_simulation,
)
