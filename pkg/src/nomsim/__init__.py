"""Meshfree solver built on second-order nonlocal gradient and Hessian operators."""

from .config import SimConfig, build, load_config, parse_config
from .engine import BoundaryCondition, Simulation, TimeSeries
from .operators import Operators, SingularShapeTensor
from .particles import ParticleCloud, SupportTable, build_supports, generate_grid

__all__ = [
    "BoundaryCondition", "Operators", "ParticleCloud", "SimConfig", "Simulation",
    "SingularShapeTensor", "SupportTable", "TimeSeries", "build", "build_supports",
    "generate_grid", "load_config", "parse_config",
]
__version__ = "0.1.0"
