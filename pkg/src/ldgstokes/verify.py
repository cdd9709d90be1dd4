"""Manufactured solutions, kernel handling, error norms and order fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .ldg import ProblemData, ProblemSpec, analytic_kernel, split_vector
from .mesh import DIRICHLET, STRESS
from .polyspace import Quadrature, element_points

TWO_PI = 2.0 * math.pi


class SinusoidViscosity:
    """``mu(x) = 1 + 0.5 prod_j sin(4 pi x_j)`` with its gradient."""

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 1.0 + 0.5 * np.prod(np.sin(4 * math.pi * x), axis=-1)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        s = np.sin(4 * math.pi * x)
        c = np.cos(4 * math.pi * x)
        d = x.shape[-1]
        out = np.empty(x.shape)
        for k in range(d):
            out[..., k] = 0.5 * 4 * math.pi * c[..., k] * np.prod(np.delete(s, k, axis=-1), axis=-1)
        return out


@dataclass
class ManufacturedSolution:
    """Smooth per-phase sinusoids; phases are labelled 1, 2, ...

    ``pressure_scale`` maps a phase to the prefactor of its pressure.
    """

    dim: int
    pressure_scale: Callable = field(default=lambda phase: np.ones(np.shape(phase)))

    def _shift(self, phase):
        return 0.25 * (np.asarray(phase, dtype=float) - 1.0)

    def _trig(self, x, phase):
        x = np.asarray(x, dtype=float)
        d = self.dim
        i = np.arange(1, d + 1)
        shift = self._shift(phase)[..., None, None]
        arg = TWO_PI * (x[..., None, :] - 0.2 * i[:, None] - shift)
        return np.sin(arg), np.cos(arg)

    def velocity(self, x, phase=1):
        S, _ = self._trig(x, phase)
        return np.prod(S, axis=-1)

    def velocity_grad(self, x, phase=1):
        """``grad[..., i, k] = d u_i / d x_k``."""
        S, C = self._trig(x, phase)
        d = self.dim
        out = np.empty(S.shape)
        for k in range(d):
            others = np.prod(np.delete(S, k, axis=-1), axis=-1)
            out[..., k] = TWO_PI * C[..., k] * others
        return out

    def velocity_hess(self, x, phase=1):
        """``H[..., i, k, l] = d^2 u_i / dx_k dx_l``."""
        S, C = self._trig(x, phase)
        d = self.dim
        u = np.prod(S, axis=-1)
        H = np.empty(S.shape + (d,))
        for k in range(d):
            for l in range(d):
                if k == l:
                    H[..., k, l] = -TWO_PI ** 2 * u
                else:
                    rest = np.prod(np.delete(S, [k, l], axis=-1), axis=-1) if d > 2 else 1.0
                    H[..., k, l] = TWO_PI ** 2 * C[..., k] * C[..., l] * rest
        return H

    def _ptrig(self, x, phase):
        x = np.asarray(x, dtype=float)
        arg = TWO_PI * (x + 0.2 - self._shift(phase)[..., None])
        return np.sin(arg), np.cos(arg)

    def pressure(self, x, phase=1):
        S, _ = self._ptrig(x, phase)
        return self.pressure_scale(phase) * np.prod(S, axis=-1)

    def pressure_grad(self, x, phase=1):
        S, C = self._ptrig(x, phase)
        out = np.empty(S.shape)
        for k in range(self.dim):
            out[..., k] = TWO_PI * C[..., k] * np.prod(np.delete(S, k, axis=-1), axis=-1)
        return out * np.asarray(self.pressure_scale(phase))[..., None]

    def divergence(self, x, phase=1):
        g = self.velocity_grad(x, phase)
        return np.trace(g, axis1=-2, axis2=-1)


def _mu_values(problem, x, phase):
    return problem.viscosity(x, phase)


def _mu_grad(problem, x, phase):
    spec = problem.viscosity.spec
    if callable(spec) and hasattr(spec, "grad"):
        return np.asarray(spec.grad(x))
    if callable(spec):
        # central differences for generic viscosity functions
        x = np.asarray(x, dtype=float)
        eps = 1e-6
        out = np.empty(x.shape)
        for k in range(x.shape[-1]):
            dx = np.zeros(x.shape[-1])
            dx[k] = eps
            out[..., k] = (problem.viscosity(x + dx, phase) - problem.viscosity(x - dx, phase)) / (2 * eps)
        return out
    return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(phase) + (np.shape(x)[-1],)))


def stress(sol, problem, x, phase):
    g = sol.velocity_grad(x, phase)
    T = g + problem.gamma * np.swapaxes(g, -1, -2)
    mu = _mu_values(problem, x, phase)[..., None, None]
    p = sol.pressure(x, phase)[..., None, None]
    return mu * T - p * np.eye(sol.dim)


def momentum_source(sol, problem, x, phase):
    """``(rho/delta) u - div(mu (grad u + gamma grad u^T)) + grad p``."""
    x = np.asarray(x, dtype=float)
    g = sol.velocity_grad(x, phase)
    H = sol.velocity_hess(x, phase)
    T = g + problem.gamma * np.swapaxes(g, -1, -2)
    mu = _mu_values(problem, x, phase)
    dmu = _mu_grad(problem, x, phase)
    lap = np.trace(H, axis1=-2, axis2=-1)                       # (..., i)
    grad_div = np.einsum("...kik->...i", H)                      # d_i sum_k d_k u_k
    visc = np.einsum("...j,...ij->...i", dmu, T) + mu[..., None] * (lap + problem.gamma * grad_div)
    out = -visc + sol.pressure_grad(x, phase)
    if problem.is_timedep:
        rho = problem.density_at(x, phase)
        out = out + (rho / problem.delta)[..., None] * sol.velocity(x, phase)
    return out


def manufactured_data(sol: ManufacturedSolution, problem: ProblemSpec, phase_fn=None) -> ProblemData:
    """Source, boundary and interface data consistent with ``sol``.

    ``phase_fn(x)`` gives the phase at boundary points (default: phase 1).
    """
    phase_fn = phase_fn or (lambda x: np.ones(np.shape(x)[:-1], dtype=int))

    def force(x, phase):
        return momentum_source(sol, problem, x, phase)

    def div_source(x, phase):
        return -sol.divergence(x, phase)

    def dirichlet(x):
        return sol.velocity(x, phase_fn(x))

    def traction(x, n):
        sig = stress(sol, problem, x, phase_fn(x))
        return np.einsum("...ij,...j->...i", sig, np.broadcast_to(n, np.shape(x)))

    def jump_u(x, pm, pq):
        return sol.velocity(x, pm) - sol.velocity(x, pq)

    def jump_traction(x, n, pm, pq):
        ds = stress(sol, problem, x, pm) - stress(sol, problem, x, pq)
        return np.einsum("...ij,...j->...i", ds, np.broadcast_to(n, np.shape(x)))

    return ProblemData(force, div_source, dirichlet, traction, jump_u, jump_traction)


# --------------------------------------------------------------------------
# kernel
# --------------------------------------------------------------------------

@dataclass
class KernelBasis:
    modes: np.ndarray      # orthonormal columns, element-major coefficients
    labels: list

    @property
    def dim(self):
        return self.modes.shape[1]


def kernel_basis(mesh, basis, problem) -> KernelBasis:
    kinds = set(np.unique(mesh.faces.kind).tolist())
    if not kinds:
        raise ValueError("mesh has no faces")
    K = analytic_kernel(mesh, basis, problem)
    labels = []
    if DIRICHLET not in kinds and not problem.is_timedep:
        labels += [f"u{c + 1}=1" for c in range(mesh.dim)]
        if problem.gamma == 1 and not any(mesh.periodic):
            labels += ["rotation"] * (1 if mesh.dim == 2 else 3)
    if STRESS not in kinds:
        labels.append("p=1")
    return KernelBasis(K, labels)


def remove_kernel(x, K):
    return x - K @ (K.T @ x) if K.shape[1] else x


# --------------------------------------------------------------------------
# errors
# --------------------------------------------------------------------------

def _eval_coeffs(basis, coeffs, ref):
    phi = basis.evaluate(ref)
    return np.einsum("qk,e...k->eq...", phi, coeffs)


def project_exact(mesh, basis, sol, q):
    """L2 projection of the exact solution into element-major coefficients."""
    quad = Quadrature(q, mesh.dim)
    pts, w = element_points(mesh, quad)
    phase = mesh.phase[:, None]
    phi = basis.evaluate(quad.nodes())
    u = np.einsum("q,qk,eqc->eck", w, phi, sol.velocity(pts, phase))
    p = np.einsum("q,qk,eq->ek", w, phi, sol.pressure(pts, phase))
    nE, d, nb = u.shape
    x = np.empty((nE, d + 1, nb))
    x[:, :d] = u
    x[:, d] = p
    return x.reshape(-1)


def measure_error(mesh, basis, x, sol, kernel=None, q=None):
    """L2 and max errors of velocity and pressure after kernel removal.

    ``x`` is an unscaled element-major coefficient vector.  Kernel modes are
    removed from the error by Gram-Schmidt in the L2 inner product.
    """
    p = basis.degree
    q = p + 3 if q is None else q
    nE, d, nb = mesh.n_elements, mesh.dim, basis.size
    if kernel is not None and kernel.shape[1]:
        xe = project_exact(mesh, basis, sol, q)
        x = x + kernel @ (kernel.T @ (xe - x))
    u, pr = split_vector(x, nE, d, nb)
    phase = mesh.phase[:, None]

    quad = Quadrature(q, d)
    pts, w = element_points(mesh, quad)
    eu = sol.velocity(pts, phase) - _eval_coeffs(basis, u, quad.nodes())
    ep = sol.pressure(pts, phase) - _eval_coeffs(basis, pr, quad.nodes())
    l2u = math.sqrt(float(np.einsum("q,eqc->", w, eu * eu)))
    l2p = math.sqrt(float(np.einsum("q,eq->", w, ep * ep)))

    ns = 2 * (p + 1)
    s1 = np.linspace(0.0, 1.0, ns)
    grids = np.meshgrid(*([s1] * d), indexing="ij")
    ref = np.stack([g.ravel() for g in grids], axis=-1)
    spts = mesh.lower_corners()[:, None, :] + mesh.h * ref[None]
    eu = sol.velocity(spts, phase) - _eval_coeffs(basis, u, ref)
    ep = sol.pressure(spts, phase) - _eval_coeffs(basis, pr, ref)
    return {
        "velocity_l2": l2u,
        "velocity_max": float(np.max(np.linalg.norm(eu, axis=-1))),
        "pressure_l2": l2p,
        "pressure_max": float(np.max(np.abs(ep))),
    }


ERROR_KEYS = ("velocity_l2", "velocity_max", "pressure_l2", "pressure_max")


@dataclass
class OrderFit:
    order: Optional[float]
    used: list
    reason: str = ""


def fit_order(hs, errs, last=3):
    """Least-squares slope of log(err) vs log(h) over the finest ``last`` grids.

    Points where the error grew under refinement (saturation) are dropped.
    """
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    order = np.argsort(-hs)
    hs, errs = hs[order], errs[order]
    keep = np.ones(hs.shape[0], dtype=bool)
    for i in range(1, hs.shape[0]):
        prev = errs[:i][keep[:i]]
        if prev.size and errs[i] >= prev[-1]:
            keep[i] = False
    keep &= errs > 0
    idx = np.flatnonzero(keep)
    hs_all = hs
    finest = np.argsort(hs_all)[:last]
    use = [i for i in idx if i in set(finest)]
    if len(use) < last:
        return OrderFit(None, [float(hs[i]) for i in use], f"only {len(use)} usable grids among the finest {last}")
    slope = np.polyfit(np.log(hs[use]), np.log(errs[use]), 1)[0]
    return OrderFit(float(slope), [float(hs[i]) for i in use])


def convergence_study(make_system, solve, grids, sol, exact_mode=False):
    """Errors per grid and fitted orders.

    ``make_system(n)`` returns a :class:`StokesSystem`; ``solve(system)``
    returns its (scaled) solution vector.  With ``exact_mode`` the solve is
    replaced by the L2 projection of the exact solution.
    """
    if len(grids) < 3:
        raise ValueError("a convergence study needs at least three grids")
    rows = []
    for n in grids:
        system = make_system(n)
        if exact_mode:
            x = project_exact(system.mesh, system.basis, sol, system.basis.degree + 3)
        else:
            x = system.unscale(solve(system))
        K = analytic_kernel(system.mesh, system.basis, system.problem)
        err = measure_error(system.mesh, system.basis, x, sol, K)
        rows.append({"n": n, "h": system.mesh.h, **err})
    fits = {k: fit_order([r["h"] for r in rows], [r[k] for r in rows]) for k in ERROR_KEYS}
    return rows, fits
