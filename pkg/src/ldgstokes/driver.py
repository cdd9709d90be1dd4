"""Glue between cases, the multigrid hierarchy and GMRES."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cases import Case, CaseConfig, build_case
from .krylov import SolveReport, convergence_rate, gmres, spectrum_estimate
from .ldg import StokesSystem
from .multigrid import MgHierarchy, build_multigrid
from .verify import measure_error


@dataclass
class Prepared:
    case: Case
    system: StokesSystem
    mg: MgHierarchy

    @property
    def config(self) -> CaseConfig:
        return self.case.config

    def apply_A(self, x):
        return self.system.matrix @ x

    def apply_V(self, r):
        return self.mg.precondition(r)


def prepare(cfg: CaseConfig) -> Prepared:
    case = build_case(cfg)
    system = case.assemble()
    mg = build_multigrid(system, cfg.nu1, cfg.nu2)
    return Prepared(case, system, mg)


def solve(prep: Prepared, tol=None):
    """GMRES + V-cycle from a zero start; returns the unscaled solution and report."""
    cfg = prep.config
    tol = cfg.tol if tol is None else tol
    x, rep = gmres(prep.apply_A, prep.apply_V, prep.system.rhs, None, tol, cfg.max_iter)
    b = prep.system.rhs
    nb = float(np.linalg.norm(b))
    rep.extra["relative_residual"] = float(np.linalg.norm(b - prep.apply_A(x)) / nb) if nb else 0.0
    return prep.system.unscale(x), rep


def errors(prep: Prepared, x):
    """Error norms of an unscaled solution against the manufactured solution."""
    s = prep.system
    K = s.kernel
    if s.scaling is not None and K.shape[1]:
        # kernel of the unscaled operator
        K, _ = np.linalg.qr(s.scaling[:, None] * K)
    return measure_error(s.mesh, s.basis, x, prep.case.solution, K)


def rho(prep: Prepared, seed=None) -> SolveReport:
    cfg = prep.config
    seed = cfg.seed if seed is None else seed
    return convergence_rate(prep.apply_A, prep.apply_V, prep.system.size, seed, cfg.tol, cfg.max_iter)


def spectrum(prep: Prepared, krylov_dim, seed=None):
    """Ritz estimate of the preconditioned operator with the analytic kernel deflated."""
    seed = prep.config.seed if seed is None else seed
    K = prep.system.kernel
    if K.shape[1]:
        K, _ = np.linalg.qr(K)
    return spectrum_estimate(prep.apply_A, prep.apply_V, prep.system.size, krylov_dim, seed,
                             kernel=K)
