"""High-order LDG discretisation of multi-phase Stokes problems with a
geometric multigrid preconditioner built by operator coarsening."""

__version__ = "0.1.0"

from .cases import CaseConfig, build_case
from .krylov import SolveReport, convergence_rate, gmres, spectrum_estimate
from .ldg import PenaltyConfig, ProblemSpec, StokesSystem, assemble_stokes, diagonal_scaling
from .mesh import build_hierarchy, build_mesh
from .multigrid import MgHierarchy, build_multigrid, vcycle
from .polyspace import Basis

__all__ = [
    "Basis", "CaseConfig", "MgHierarchy", "PenaltyConfig", "ProblemSpec", "SolveReport",
    "StokesSystem", "assemble_stokes", "build_case", "build_hierarchy", "build_mesh",
    "build_multigrid", "convergence_rate", "diagonal_scaling", "gmres", "spectrum_estimate",
    "vcycle",
]
