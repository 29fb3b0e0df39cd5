"""FFT-based direct solvers for high-order finite elements on boxes."""

import importlib.metadata

from .config import Mesh1D, ProblemSpec, RunConfig
from .errors import FftFemError, NumericalError
from .poisson_solver import SolverPlan, build_plan, solve

try:
    __version__ = importlib.metadata.version("fftfem")
except importlib.metadata.PackageNotFoundError:
    __version__ = "0.0.0"

__all__ = [
    "FftFemError",
    "Mesh1D",
    "NumericalError",
    "ProblemSpec",
    "RunConfig",
    "SolverPlan",
    "build_plan",
    "solve",
]
