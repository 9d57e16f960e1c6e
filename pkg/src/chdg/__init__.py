from .benchmarks import (
    BenchmarkSpec,
    build_problem,
    cavity_reference,
    l2_projection_error,
    l2_relative_error,
    plane_wave_reference,
)
from .mesh import BoundaryKind, Mesh, build_box_mesh, build_connectivity, read_msh
from .reference import ReferenceElement, get_reference
from .solvers import IterationReport, Method, SolverConfig, solve
from .transmission import BoundarySources, TransmissionSystem

__version__ = "0.1.0"

__all__ = [
    "BenchmarkSpec",
    "BoundaryKind",
    "BoundarySources",
    "IterationReport",
    "Mesh",
    "Method",
    "ReferenceElement",
    "SolverConfig",
    "TransmissionSystem",
    "build_box_mesh",
    "build_connectivity",
    "build_problem",
    "cavity_reference",
    "get_reference",
    "l2_projection_error",
    "l2_relative_error",
    "plane_wave_reference",
    "read_msh",
    "solve",
]
