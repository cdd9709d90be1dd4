"""Named test problems with manufactured data."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .ldg import PenaltyConfig, ProblemData, ProblemSpec, assemble_stokes, diagonal_scaling
from .mesh import build_mesh
from .polyspace import Basis
from .verify import ManufacturedSolution, SinusoidViscosity, manufactured_data

CASES = ("periodic", "dirichlet", "stress", "variable-viscosity", "multiphase-square",
         "timedep-single", "timedep-multiphase-square")

_DEFAULT_BC = {
    "periodic": "periodic",
    "dirichlet": "dirichlet",
    "stress": "stress",
    "variable-viscosity": "periodic",
    "multiphase-square": "periodic",
    "timedep-single": "stress",
    "timedep-multiphase-square": "stress",
}


@dataclass
class CaseConfig:
    """Experiment parameters.  ``None`` fields take case-dependent defaults."""

    case: str = "periodic"
    dim: int = 2
    n: int = 16
    degree: int = 2
    gamma: int = 0
    tau: Optional[float] = None
    tau0: Optional[float] = None
    bc: Optional[str] = None
    mu1: float = 1.0
    mu2: float = 1.0
    rho1: float = 1.0
    rho2: float = 1.0
    delta_factor: float = 0.1
    flux: str = "upwind"
    scaling: Optional[bool] = None
    rhs: str = "manufactured"
    nu1: int = 3
    nu2: int = 3
    tol: float = 1e-8
    max_iter: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; choose from {', '.join(CASES)}")
        if self.rhs not in ("manufactured", "zero"):
            raise ValueError("rhs must be 'manufactured' or 'zero'")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.degree < 1:
            raise ValueError("degree must be at least 1")
        if self.nu1 < 0 or self.nu2 < 0 or self.nu1 + self.nu2 == 0:
            raise ValueError("smoothing counts must be non-negative and not both zero")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        for name in ("mu1", "mu2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.delta_factor <= 0:
            raise ValueError("delta_factor must be positive")
        # resolves the tau default early so bad (gamma, dim, p) fail here
        self.penalties()

    @property
    def multiphase(self):
        return "multiphase" in self.case

    @property
    def timedep(self):
        return self.case.startswith("timedep")

    @property
    def boundary(self):
        return self.bc or _DEFAULT_BC[self.case]

    @property
    def use_scaling(self):
        return self.multiphase if self.scaling is None else bool(self.scaling)

    def with_(self, **kw):
        return CaseConfig(**{**asdict(self), **kw})

    def as_dict(self):
        return asdict(self)

    def penalties(self):
        pen = PenaltyConfig.default(self.gamma, self.dim, self.degree, self.tau)
        if self.tau0 is not None:
            pen = PenaltyConfig(pen.tau, float(self.tau0))
        return pen


def config_fields():
    return {f.name: f for f in fields(CaseConfig)}


def square_phase(x):
    """Phase 1 inside the centred square of side 1/2, phase 2 outside."""
    inside = (np.abs(np.asarray(x) - 0.5) < 0.25).all(axis=-1)
    return np.where(inside, 1, 2)


@dataclass
class Case:
    config: CaseConfig
    mesh: object
    basis: Basis
    problem: ProblemSpec
    solution: ManufacturedSolution
    phase_fn: object = field(default=None)

    def assemble(self):
        system = assemble_stokes(self.mesh, self.basis, self.problem, self.config.penalties())
        return diagonal_scaling(system) if self.config.use_scaling else system


def build_case(cfg: CaseConfig) -> Case:
    multi = cfg.multiphase
    phase_fn = square_phase if multi else None
    mesh = build_mesh(cfg.dim, cfg.n, phase_fn, cfg.boundary)
    basis = Basis(cfg.degree, cfg.dim, mesh.h)

    if cfg.case == "variable-viscosity":
        viscosity = SinusoidViscosity()
        pscale = lambda phase: np.ones(np.shape(phase))  # noqa: E731
    elif multi:
        viscosity = {1: cfg.mu1, 2: cfg.mu2}
        table = np.array([0.0, cfg.mu1, cfg.mu2])
        pscale = lambda phase: table[np.asarray(phase, dtype=int)]  # noqa: E731
    else:
        viscosity = cfg.mu1
        pscale = lambda phase: np.full(np.shape(phase), cfg.mu1)  # noqa: E731

    density, delta = 0.0, None
    if cfg.timedep:
        density = {1: cfg.rho1, 2: cfg.rho2} if multi else cfg.rho1
        delta = cfg.delta_factor * mesh.h

    sol = ManufacturedSolution(cfg.dim, pscale)
    problem = ProblemSpec(gamma=cfg.gamma, viscosity=viscosity, density=density, delta=delta,
                          flux=cfg.flux)
    if cfg.rhs == "manufactured":
        problem.data = manufactured_data(sol, problem, phase_fn)
    else:
        problem.data = ProblemData()
    return Case(cfg, mesh, basis, problem, sol, phase_fn)
