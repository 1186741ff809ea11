"""Numerical laboratory for degenerate Keller–Segel systems and their particle approximations."""

from .core import (
    DiagnosticRecord,
    Grid,
    ScalarField,
    SimParams,
    Trajectory,
    VectorField,
    read_diagnostics,
    read_snapshot,
    validate,
    write_snapshot,
)
from .pde import SystemKind, make_initial_data, solve, stable_dt, step
from .pressure import PressureLaw

__version__ = "0.1.0"

__all__ = [
    "DiagnosticRecord",
    "Grid",
    "PressureLaw",
    "ScalarField",
    "SimParams",
    "SystemKind",
    "Trajectory",
    "VectorField",
    "make_initial_data",
    "read_diagnostics",
    "read_snapshot",
    "solve",
    "stable_dt",
    "step",
    "validate",
    "write_snapshot",
    "__version__",
]
