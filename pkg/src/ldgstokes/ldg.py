"""LDG operators for the multi-phase Stokes equations on Cartesian meshes.

Scalar operators (discrete gradients, mass matrices, penalty matrices) act on
one scalar field with ``nb = (p+1)^d`` coefficients per element and are kept
as scipy CSR matrices in element order.  The assembled saddle-point operator
uses an element-major layout: element ``e`` owns the contiguous slice
``[e*bs, (e+1)*bs)`` holding ``u_1, ..., u_d, p`` (``bs = (d+1) nb``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .blocklinalg import BlockSparseMatrix
from .mesh import DIRICHLET, INTERPHASE, INTRAPHASE, STRESS, CartesianMesh
from .polyspace import Basis, DgField, Quadrature, l2_project, mass_matrix

log = logging.getLogger(__name__)

# pressure penalty prefactors tau by (gamma, dim) for p = 1..5
TAU_TABLE = {
    (0, 2): (0.19, 0.10, 0.086, 0.019, 0.031),
    (0, 3): (0.12, 0.088, 0.084),
    (1, 2): (0.14, 0.046, 0.034, 0.0095, 0.011),
    (1, 3): (0.12, 0.039, 0.040),
}


def default_tau(gamma, dim, degree):
    table = TAU_TABLE.get((int(gamma), int(dim)))
    if table is None:
        raise ValueError(f"no default tau for gamma={gamma}, dim={dim}")
    if not 1 <= degree <= len(table):
        raise ValueError(f"no default tau for gamma={gamma}, dim={dim}, p={degree}")
    return table[degree - 1]


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty parameters; velocity penalties scale as ``C p mu / h``."""

    tau: float
    tau0: float
    c_boundary: float = 10.0
    c_intraphase: float = 0.0
    c_interphase: float = 3.0

    def __post_init__(self):
        if not self.tau > 0 or not self.tau0 > 0:
            raise ValueError("tau and tau0 must be positive")
        if self.c_boundary <= 0 or self.c_intraphase < 0 or self.c_interphase < 0:
            raise ValueError("velocity penalty constants must be non-negative (boundary positive)")

    @classmethod
    def default(cls, gamma, dim, degree, tau=None, **kw):
        tau = default_tau(gamma, dim, degree) if tau is None else float(tau)
        return cls(tau=tau, tau0=0.5 * degree, **kw)


class Viscosity:
    """Viscosity as per-phase constants or a function ``mu(x)`` / ``mu(x, phase)``."""

    def __init__(self, spec):
        if isinstance(spec, Viscosity):
            spec = spec.spec
        self.spec = spec
        if isinstance(spec, dict):
            if any(v <= 0 for v in spec.values()):
                raise ValueError("viscosities must be positive")
        elif not callable(spec):
            if float(spec) <= 0:
                raise ValueError("viscosity must be positive")

    @property
    def is_constant_per_phase(self):
        return not callable(self.spec)

    def __call__(self, x, phase):
        x = np.asarray(x, dtype=float)
        phase = np.asarray(phase)
        shape = np.broadcast_shapes(x.shape[:-1], phase.shape)
        if isinstance(self.spec, dict):
            lut = self.spec
            out = np.vectorize(lambda c: float(lut[int(c)]), otypes=[float])(phase)
            return np.broadcast_to(out, shape).astype(float)
        if callable(self.spec):
            try:
                val = self.spec(x, phase)
            except TypeError:
                val = self.spec(x)
            return np.broadcast_to(np.asarray(val, dtype=float), shape)
        return np.full(shape, float(self.spec))


def _phase_lookup(spec, phase):
    if isinstance(spec, dict):
        return np.vectorize(lambda c: float(spec[int(c)]), otypes=[float])(phase)
    return np.full(np.shape(phase), float(spec))


@dataclass
class ProblemData:
    """Source and boundary/interface data; ``None`` means zero.

    Signatures (``x`` has trailing axis ``d``; ``n`` is the unit normal):
    ``force(x, phase) -> (..., d)``, ``div_source(x, phase) -> (...)``,
    ``dirichlet(x) -> (..., d)``, ``traction(x, n) -> (..., d)``,
    ``jump_u(x, ph_minus, ph_plus) -> (..., d)`` (value of ``u^- - u^+``),
    ``jump_traction(x, n, ph_minus, ph_plus) -> (..., d)``.
    """

    force: Optional[Callable] = None
    div_source: Optional[Callable] = None
    dirichlet: Optional[Callable] = None
    traction: Optional[Callable] = None
    jump_u: Optional[Callable] = None
    jump_traction: Optional[Callable] = None


@dataclass
class ProblemSpec:
    gamma: int = 0
    viscosity: object = 1.0
    density: object = 0.0
    delta: Optional[float] = None
    data: ProblemData = field(default_factory=ProblemData)
    flux: str = "upwind"  # "upwind" or "central" on interphase faces

    def __post_init__(self):
        if self.gamma not in (0, 1):
            raise ValueError("gamma must be 0 or 1")
        self.viscosity = Viscosity(self.viscosity)
        if self.is_timedep:
            if self.delta is None or not self.delta > 0:
                raise ValueError("time-dependent problems need delta > 0")
        if self.flux not in ("upwind", "central"):
            raise ValueError("flux must be 'upwind' or 'central'")

    @property
    def is_timedep(self):
        d = self.density
        if isinstance(d, dict):
            return any(v > 0 for v in d.values())
        if callable(d):
            return True
        return float(d) > 0

    def density_at(self, x, phase):
        if callable(self.density):
            return np.broadcast_to(np.asarray(self.density(x, phase), dtype=float),
                                   np.broadcast_shapes(np.shape(x)[:-1], np.shape(phase)))
        return _phase_lookup(self.density, phase)


def upwind_lambda(mu_left, mu_right):
    """Interface flux weight biasing the velocity flux to the more viscous side."""
    mu_left = np.asarray(mu_left, dtype=float)
    mu_right = np.asarray(mu_right, dtype=float)
    if np.any(mu_left <= 0) or np.any(mu_right <= 0):
        raise ValueError("viscosities must be positive")
    lam = np.where(mu_left < mu_right, 0.0, np.where(mu_left > mu_right, 1.0, 0.5))
    return lam if lam.ndim else float(lam)


# --------------------------------------------------------------------------
# face helpers
# --------------------------------------------------------------------------

@dataclass
class FaceInfo:
    """Per-face scalars shared by all operators on one mesh."""

    mu_minus: np.ndarray
    mu_plus: np.ndarray
    lam: np.ndarray


def flux_weights(mesh: CartesianMesh, problem: ProblemSpec) -> FaceInfo:
    f = mesh.faces
    pm = mesh.phase[f.minus]
    pq = np.where(f.plus >= 0, mesh.phase[np.maximum(f.plus, 0)], pm)
    mu_m = problem.viscosity(f.centroid, pm)
    mu_q = problem.viscosity(f.centroid, pq)
    lam = np.zeros(len(f))
    inter = f.kind == INTERPHASE
    if problem.flux == "upwind":
        lam[inter] = upwind_lambda(mu_m[inter], mu_q[inter])
    else:
        lam[inter] = 0.5
    return FaceInfo(mu_m, mu_q, lam)


def _groups(mesh, kinds):
    """Yield ``(axis, sign, face_ids)`` for faces whose kind is in ``kinds``."""
    f = mesh.faces
    sel = np.isin(f.kind, kinds)
    for a in range(mesh.dim):
        for s in (1, -1):
            ids = np.flatnonzero(sel & (f.axis == a) & (f.sign == s))
            if ids.size:
                yield a, s, ids


def _sides(sign):
    """Reference side (0 low, 1 high) of the minus and plus elements."""
    return (1, 0) if sign > 0 else (0, 1)


def _face_quadrature(mesh, basis, axis, sign, ids, q):
    """Physical points ``(nf, nq, d)``, weights, minus/plus basis values."""
    quad = Quadrature(q, mesh.dim)
    sm, sq = _sides(sign)
    pts_m, w = quad.face_nodes(axis, sm)
    pts_q, _ = quad.face_nodes(axis, sq)
    phi_m = basis.evaluate(pts_m)
    phi_q = basis.evaluate(pts_q)
    cent = mesh.faces.centroid[ids]
    local = pts_m - 0.5
    local[:, axis] = 0.0
    x = cent[:, None, :] + mesh.h * local[None, :, :]
    return x, w * mesh.h ** (mesh.dim - 1), phi_m, phi_q


def _to_csr(bsm: BlockSparseMatrix):
    m = bsm.to_scipy().tocsr()
    m.eliminate_zeros()
    return m


def _assemble(nE, nb, triplets):
    if not triplets:
        return sp.csr_matrix((nE * nb, nE * nb))
    rows = np.concatenate([t[0] for t in triplets])
    cols = np.concatenate([t[1] for t in triplets])
    blocks = np.concatenate([np.broadcast_to(t[2], (t[0].shape[0], nb, nb)) for t in triplets])
    return _to_csr(BlockSparseMatrix.from_blocks(rows, cols, blocks, nE, nE, (nb, nb)))


def _scaled_blocks(F, scale):
    return np.asarray(scale, dtype=float)[:, None, None] * F[None]


# --------------------------------------------------------------------------
# operators
# --------------------------------------------------------------------------

def discrete_gradient(mesh: CartesianMesh, basis: Basis, info: FaceInfo):
    """Return ``[G_1, ..., G_d]``: broken gradient plus face lifting."""
    nE, nb = mesh.n_elements, basis.size
    f = mesh.faces
    out = []
    for k in range(mesh.dim):
        trip = [(np.arange(nE), np.arange(nE), basis.grad_matrix(k))]
        for a, s, ids in _groups(mesh, [INTRAPHASE, INTERPHASE, DIRICHLET]):
            if a != k:
                continue
            sm, sq = _sides(s)
            tm, tq = basis.trace(sm), basis.trace(sq)
            m, q = f.minus[ids], f.plus[ids]
            kind = f.kind[ids]
            lam = info.lam[ids]
            # weights on the plus side (intra: 1, inter: lambda) and minus side
            wq = np.where(kind == INTRAPHASE, 1.0, np.where(kind == INTERPHASE, lam, 0.0))
            wm = np.where(kind == INTERPHASE, 1.0 - lam, 0.0)
            wd = np.where(kind == DIRICHLET, 1.0, 0.0)
            on_q = wq != 0
            if on_q.any():
                trip.append((q[on_q], q[on_q], _scaled_blocks(basis.face_matrix(k, tq, tq), s * wq[on_q])))
                trip.append((q[on_q], m[on_q], _scaled_blocks(basis.face_matrix(k, tq, tm), -s * wq[on_q])))
            on_m = wm != 0
            if on_m.any():
                trip.append((m[on_m], q[on_m], _scaled_blocks(basis.face_matrix(k, tm, tq), s * wm[on_m])))
                trip.append((m[on_m], m[on_m], _scaled_blocks(basis.face_matrix(k, tm, tm), -s * wm[on_m])))
            on_d = wd != 0
            if on_d.any():
                trip.append((m[on_d], m[on_d], _scaled_blocks(basis.face_matrix(k, tm, tm), -s * wd[on_d])))
        out.append(_assemble(nE, nb, trip))
    return out


def adjoint_gradient(G, M=None):
    """``calG_i = -M^{-1} G_i^T M``; with an orthonormal basis ``M = I``."""
    if M is None:
        return [(-g.T).tocsr() for g in G]
    Minv = sp.linalg.inv(sp.csc_matrix(M))
    return [(-(Minv @ g.T @ M)).tocsr() for g in G]


@dataclass
class PenaltyOperators:
    Et: sp.csr_matrix          # velocity penalty, per scalar component
    E: sp.csr_matrix           # pressure penalty
    Emu: Optional[sp.csr_matrix] = None
    Erho: Optional[sp.csr_matrix] = None
    tau_p: Optional[np.ndarray] = None   # per face, intraphase only (nan elsewhere)


def _jump_matrix(mesh, basis, ids_by_group, weight_fn):
    """``sum tau int [u][v]`` over interior faces; ``weight_fn(ids)`` gives tau."""
    f = mesh.faces
    trip = []
    for a, s, ids in ids_by_group:
        tau = weight_fn(ids)
        sm, sq = _sides(s)
        tm, tq = basis.trace(sm), basis.trace(sq)
        m, q = f.minus[ids], f.plus[ids]
        trip.append((m, m, _scaled_blocks(basis.face_matrix(a, tm, tm), tau)))
        trip.append((m, q, _scaled_blocks(basis.face_matrix(a, tm, tq), -tau)))
        trip.append((q, m, _scaled_blocks(basis.face_matrix(a, tq, tm), -tau)))
        trip.append((q, q, _scaled_blocks(basis.face_matrix(a, tq, tq), tau)))
    return trip


def penalty_coefficients(mesh, basis, problem, penalties, info):
    """Per-face velocity penalties and the intraphase pressure penalties."""
    p, h = basis.degree, mesh.h
    f = mesh.faces
    tau_u = np.zeros(len(f))
    k = f.kind
    tau_u[k == INTRAPHASE] = penalties.c_intraphase * p * info.mu_minus[k == INTRAPHASE] / h
    inter = k == INTERPHASE
    tau_u[inter] = penalties.c_interphase * p * np.minimum(info.mu_minus[inter], info.mu_plus[inter]) / h
    tau_u[k == DIRICHLET] = penalties.c_boundary * p * info.mu_minus[k == DIRICHLET] / h

    intra = k == INTRAPHASE
    mu = info.mu_minus
    tau_mu = np.full(len(f), np.nan)
    tau_mu[intra] = penalties.tau * h / mu[intra]
    tau_rho = None
    tau_p = tau_mu.copy()
    if problem.is_timedep:
        rho = problem.density_at(f.centroid, mesh.phase[f.minus])
        tau_rho = np.full(len(f), np.nan)
        with np.errstate(divide="ignore"):
            tau_rho[intra] = penalties.tau0 * problem.delta / (h * rho[intra])
        tau_p[intra] = 1.0 / (h * rho[intra] / (penalties.tau0 * problem.delta) + mu[intra] / (penalties.tau * h))
    if np.any(~(tau_p[intra] > 0)):
        raise ValueError("pressure penalty must be positive on every intraphase face")
    return tau_u, tau_p, tau_mu, tau_rho


def penalty_operators(mesh, basis, problem, penalties, info=None):
    """Velocity penalty ``Et`` and pressure penalty ``E`` (plus split forms)."""
    info = flux_weights(mesh, problem) if info is None else info
    nE, nb = mesh.n_elements, basis.size
    f = mesh.faces
    tau_u, tau_p, tau_mu, tau_rho = penalty_coefficients(mesh, basis, problem, penalties, info)

    groups_u = [g for g in _groups(mesh, [INTRAPHASE, INTERPHASE])]
    trip = _jump_matrix(mesh, basis, groups_u, lambda ids: tau_u[ids])
    for a, s, ids in _groups(mesh, [DIRICHLET]):
        sm, _ = _sides(s)
        tm = basis.trace(sm)
        trip.append((f.minus[ids], f.minus[ids], _scaled_blocks(basis.face_matrix(a, tm, tm), tau_u[ids])))
    trip = [t for t in trip if np.any(t[2])]
    Et = _assemble(nE, nb, trip)

    groups_p = list(_groups(mesh, [INTRAPHASE]))
    E = _assemble(nE, nb, _jump_matrix(mesh, basis, groups_p, lambda ids: tau_p[ids]))
    Emu = Erho = None
    if problem.is_timedep:
        Emu = _assemble(nE, nb, _jump_matrix(mesh, basis, groups_p, lambda ids: tau_mu[ids]))
        Erho = _assemble(nE, nb, _jump_matrix(mesh, basis, groups_p, lambda ids: tau_rho[ids]))
    return PenaltyOperators(Et, E, Emu, Erho, tau_p)


def penalty_source(mesh, basis, problem, penalties, info=None, q=None):
    """Affine part of the velocity penalty moved to the right-hand side, ``(nE, d, nb)``."""
    info = flux_weights(mesh, problem) if info is None else info
    q = basis.degree + 2 if q is None else q
    d, nb = mesh.dim, basis.size
    out = np.zeros((mesh.n_elements, d, nb))
    data = problem.data
    tau_u, *_ = penalty_coefficients(mesh, basis, problem, penalties, info)
    f = mesh.faces
    pm_all = mesh.phase[f.minus]
    if data.jump_u is not None:
        for a, s, ids in _groups(mesh, [INTERPHASE]):
            x, w, phi_m, phi_q = _face_quadrature(mesh, basis, a, s, ids, q)
            g = np.asarray(data.jump_u(x, pm_all[ids][:, None], mesh.phase[f.plus[ids]][:, None]))
            mom_m = np.einsum("q,fqc,qk->fck", w, g, phi_m) * tau_u[ids][:, None, None]
            mom_q = np.einsum("q,fqc,qk->fck", w, g, phi_q) * tau_u[ids][:, None, None]
            np.add.at(out, f.minus[ids], mom_m)
            np.add.at(out, f.plus[ids], -mom_q)
    if data.dirichlet is not None:
        for a, s, ids in _groups(mesh, [DIRICHLET]):
            x, w, phi_m, _ = _face_quadrature(mesh, basis, a, s, ids, q)
            g = np.asarray(data.dirichlet(x))
            mom = np.einsum("q,fqc,qk->fck", w, g, phi_m) * tau_u[ids][:, None, None]
            np.add.at(out, f.minus[ids], mom)
    return out


@dataclass
class Lifts:
    Jg: np.ndarray    # (nE, d*d, nb), component (a, k) -> a*d + k
    Jh: np.ndarray    # (nE, d, nb)
    Jgn: np.ndarray   # (nE, nb)


def lift_data(mesh, basis, problem, info=None, q=None) -> Lifts:
    info = flux_weights(mesh, problem) if info is None else info
    q = basis.degree + 2 if q is None else q
    d, nb, nE = mesh.dim, basis.size, mesh.n_elements
    Jg = np.zeros((nE, d, d, nb))
    Jh = np.zeros((nE, d, nb))
    Jgn = np.zeros((nE, nb))
    data = problem.data
    f = mesh.faces
    ph = mesh.phase

    def _normals(a, s, nf):
        nrm = np.zeros((nf, 1, d))
        nrm[:, :, a] = s
        return nrm

    if data.dirichlet is not None:
        for a, s, ids in _groups(mesh, [DIRICHLET]):
            x, w, phi_m, _ = _face_quadrature(mesh, basis, a, s, ids, q)
            g = np.asarray(data.dirichlet(x))
            mom = s * np.einsum("q,fqc,qk->fck", w, g, phi_m)
            np.add.at(Jg[:, :, a, :], f.minus[ids], mom)
            np.add.at(Jgn, f.minus[ids], mom[:, a, :])
    if data.traction is not None:
        for a, s, ids in _groups(mesh, [STRESS]):
            x, w, phi_m, _ = _face_quadrature(mesh, basis, a, s, ids, q)
            hv = np.asarray(data.traction(x, _normals(a, s, ids.size)))
            np.add.at(Jh, f.minus[ids], np.einsum("q,fqc,qk->fck", w, hv, phi_m))
    for a, s, ids in _groups(mesh, [INTERPHASE]):
        lam = info.lam[ids][:, None, None]
        m, pq = f.minus[ids], f.plus[ids]
        x, w, phi_m, phi_q = _face_quadrature(mesh, basis, a, s, ids, q)
        pm_, pp_ = ph[m][:, None], ph[pq][:, None]
        if data.jump_u is not None:
            g = np.asarray(data.jump_u(x, pm_, pp_))
            mom_m = s * np.einsum("q,fqc,qk->fck", w, g, phi_m) * (1.0 - lam)
            mom_q = s * np.einsum("q,fqc,qk->fck", w, g, phi_q) * lam
            np.add.at(Jg[:, :, a, :], m, mom_m)
            np.add.at(Jg[:, :, a, :], pq, mom_q)
            np.add.at(Jgn, m, mom_m[:, a, :])
            np.add.at(Jgn, pq, mom_q[:, a, :])
        if data.jump_traction is not None:
            hv = np.asarray(data.jump_traction(x, _normals(a, s, ids.size), pm_, pp_))
            np.add.at(Jh, m, np.einsum("q,fqc,qk->fck", w, hv, phi_m) * lam)
            np.add.at(Jh, pq, np.einsum("q,fqc,qk->fck", w, hv, phi_q) * (1.0 - lam))
    return Lifts(Jg.reshape(nE, d * d, nb), Jh, Jgn)


# --------------------------------------------------------------------------
# the saddle-point system
# --------------------------------------------------------------------------

@dataclass
class StokesOperators:
    """Scalar building blocks of the Stokes operator on one level."""

    dim: int
    nb: int
    n_elements: int
    gamma: int
    G: list
    Mmu: sp.csr_matrix
    Et: sp.csr_matrix
    E: sp.csr_matrix
    Mrho: Optional[sp.csr_matrix] = None
    delta: Optional[float] = None
    Emu: Optional[sp.csr_matrix] = None
    Erho: Optional[sp.csr_matrix] = None

    @property
    def bs(self):
        return (self.dim + 1) * self.nb

    @property
    def size(self):
        return self.n_elements * self.bs

    @property
    def is_timedep(self):
        return self.Mrho is not None

    def element_viscosity(self):
        """Element-average viscosity, the (0, 0) entry of each ``Mmu`` block."""
        idx = np.arange(self.n_elements) * self.nb
        return np.asarray(self.Mmu[idx, idx]).ravel()


def _element_major(S, ci, cj, nb, bs):
    c = S.tocoo()
    r = (c.row // nb) * bs + ci * nb + c.row % nb
    k = (c.col // nb) * bs + cj * nb + c.col % nb
    return r, k, c.data


def viscous_blocks(ops: StokesOperators):
    """``{(i, j): A_ij}`` of the velocity block, time shift included."""
    d = ops.dim
    MG = [(ops.Mmu @ g).tocsr() for g in ops.G]
    lap = ops.Et.copy()
    for k in range(d):
        lap = lap + (ops.G[k].T @ MG[k])
    if ops.is_timedep:
        lap = lap + ops.Mrho / ops.delta
    blocks = {}
    for i in range(d):
        for j in range(d):
            b = lap if i == j else None
            if ops.gamma:
                cross = ops.G[j].T @ MG[i]
                b = cross if b is None else b + cross
            if b is not None:
                blocks[(i, j)] = b.tocsr()
    return blocks


def stokes_matrix(ops: StokesOperators) -> sp.csr_matrix:
    """Assemble the saddle-point operator in element-major CSR layout."""
    d, nb, bs = ops.dim, ops.nb, ops.bs
    parts = []
    for (i, j), b in viscous_blocks(ops).items():
        parts.append(_element_major(b, i, j, nb, bs))
    for i in range(d):
        parts.append(_element_major(-ops.G[i].T, i, d, nb, bs))
        parts.append(_element_major(-ops.G[i], d, i, nb, bs))
    parts.append(_element_major(-ops.E, d, d, nb, bs))
    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    n = ops.size
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def split_vector(x, n_elements, dim, nb):
    """Element-major vector to ``(u (nE, d, nb), p (nE, nb))`` views."""
    x = np.asarray(x).reshape(n_elements, dim + 1, nb)
    return x[:, :dim, :], x[:, dim, :]


def join_vector(u, p):
    u = np.asarray(u)
    nE, d, nb = u.shape
    x = np.empty((nE, d + 1, nb))
    x[:, :d] = u
    x[:, d] = p
    return x.reshape(-1)


def analytic_kernel(mesh, basis, problem, q=None):
    """Orthonormal columns spanning the trivial kernel (element-major layout).

    Velocity constants appear when there is no Dirichlet boundary and no
    time shift; rigid rotations additionally for the viscous-stress form on
    non-periodic boxes; the constant pressure when there is no stress
    boundary.
    """
    d, nb, nE = mesh.dim, basis.size, mesh.n_elements
    kinds = set(np.unique(mesh.faces.kind).tolist())
    has_d = DIRICHLET in kinds
    has_s = STRESS in kinds
    modes = []

    def _vel(func):
        fld = l2_project(mesh, basis, func, q=q, shape="vector")
        return join_vector(fld.coeffs, np.zeros((nE, nb)))

    if not has_d and not problem.is_timedep:
        for c in range(d):
            modes.append(_vel(lambda x, c=c: np.eye(d)[c] * np.ones(x.shape[:-1] + (1,))))
        if problem.gamma == 1 and not any(mesh.periodic):
            axes = [(0, 1)] if d == 2 else [(0, 1), (1, 2), (2, 0)]
            for a, b in axes:
                def rot(x, a=a, b=b):
                    out = np.zeros(x.shape)
                    out[..., a] = -(x[..., b] - 0.5)
                    out[..., b] = x[..., a] - 0.5
                    return out
                modes.append(_vel(rot))
    if not has_s:
        pc = np.zeros((nE, nb))
        pc[:, 0] = np.sqrt(mesh.h ** d)
        modes.append(join_vector(np.zeros((nE, d, nb)), pc))
    if not modes:
        return np.zeros((nE * (d + 1) * nb, 0))
    K, _ = np.linalg.qr(np.stack(modes, axis=1))
    return K


def project_out(b, K, rel_tol=1e-10):
    """Remove the kernel component of ``b`` when it exceeds ``rel_tol * |b|``."""
    if K.shape[1] == 0:
        return b
    c = K.T @ b
    nb_ = np.linalg.norm(b)
    if np.linalg.norm(c) > rel_tol * nb_:
        b = b - K @ c
    return b


@dataclass
class StokesSystem:
    mesh: CartesianMesh
    basis: Basis
    problem: ProblemSpec
    penalties: PenaltyConfig
    ops: StokesOperators
    matrix: sp.csr_matrix
    rhs: np.ndarray
    kernel: np.ndarray
    info: FaceInfo
    scaling: Optional[np.ndarray] = None

    @property
    def size(self):
        return self.matrix.shape[0]

    def split(self, x):
        return split_vector(x, self.mesh.n_elements, self.mesh.dim, self.basis.size)

    def unscale(self, x):
        return x if self.scaling is None else self.scaling * x

    def velocity_field(self, x):
        u, _ = self.split(self.unscale(x))
        return DgField(self.mesh, self.basis, u, "vector")

    def pressure_field(self, x):
        _, p = self.split(self.unscale(x))
        return DgField(self.mesh, self.basis, p, "scalar")


def build_operators(mesh, basis, problem, penalties, info=None, q=None) -> StokesOperators:
    info = flux_weights(mesh, problem) if info is None else info
    G = discrete_gradient(mesh, basis, info)
    qq = basis.degree + 2 if q is None else q
    Mmu = mass_matrix(mesh, basis, problem.viscosity, q=qq).to_scipy().tocsr()
    pen = penalty_operators(mesh, basis, problem, penalties, info)
    Mrho = None
    if problem.is_timedep:
        Mrho = mass_matrix(mesh, basis, lambda x, ph: problem.density_at(x, ph), q=qq).to_scipy().tocsr()
    return StokesOperators(mesh.dim, basis.size, mesh.n_elements, problem.gamma, G, Mmu,
                           pen.Et, pen.E, Mrho, problem.delta, pen.Emu, pen.Erho)


def assemble_rhs(mesh, basis, problem, penalties, ops, info, q=None):
    d, nb, nE = mesh.dim, basis.size, mesh.n_elements
    data = problem.data
    q = basis.degree + 2 if q is None else q
    bu = np.zeros((nE, d, nb))
    bp = np.zeros((nE, nb))
    if data.force is not None:
        bu += l2_project(mesh, basis, data.force, q=q, shape="vector").coeffs
    if data.div_source is not None:
        bp += l2_project(mesh, basis, data.div_source, q=q, shape="scalar").coeffs[:, 0]
    lifts = lift_data(mesh, basis, problem, info, q=q)
    Jg = lifts.Jg.reshape(nE, d, d, nb)
    for i in range(d):
        acc = np.zeros(nE * nb)
        for j in range(d):
            jg = Jg[:, i, j, :].reshape(-1)
            if problem.gamma:
                jg = jg + Jg[:, j, i, :].reshape(-1)
            acc += ops.G[j].T @ (ops.Mmu @ jg)
        bu[:, i, :] -= acc.reshape(nE, nb)
    bu += lifts.Jh
    bu += penalty_source(mesh, basis, problem, penalties, info, q=q)
    bp += lifts.Jgn
    return join_vector(bu, bp)


def assemble_stokes(mesh, basis, problem, penalties=None, q=None) -> StokesSystem:
    """Assemble the LDG Stokes operator, right-hand side and kernel."""
    if penalties is None:
        penalties = PenaltyConfig.default(problem.gamma, mesh.dim, basis.degree)
    if STRESS in mesh.faces.kind and problem.gamma == 0:
        log.info("stress boundary with gamma=0 imposes a Neumann-like condition on grad u")
    info = flux_weights(mesh, problem)
    ops = build_operators(mesh, basis, problem, penalties, info, q=q)
    A = stokes_matrix(ops)
    b = assemble_rhs(mesh, basis, problem, penalties, ops, info, q=q)
    K = analytic_kernel(mesh, basis, problem)
    b = project_out(b, K)
    return StokesSystem(mesh, basis, problem, penalties, ops, A, b, K, info)


def scaling_vector(ops: StokesOperators, mu_elem=None):
    """``diag(alpha, beta)`` as an element-major vector."""
    mu = ops.element_viscosity() if mu_elem is None else np.asarray(mu_elem, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("element viscosity must be positive for diagonal scaling")
    nE, d, nb = ops.n_elements, ops.dim, ops.nb
    D = np.empty((nE, d + 1, nb))
    D[:, :d, :] = (1.0 / np.sqrt(mu))[:, None, None]
    D[:, d, :] = np.sqrt(mu)[:, None]
    return D.reshape(-1)


def scale_matrix(A, D):
    Dm = sp.diags(D)
    return (Dm @ A @ Dm).tocsr()


def diagonal_scaling(system: StokesSystem) -> StokesSystem:
    """Return the congruence-scaled system; unscale solutions with ``x = D x~``."""
    if system.scaling is not None:
        return system
    D = scaling_vector(system.ops)
    K = system.kernel
    if K.shape[1]:
        K, _ = np.linalg.qr(K / D[:, None])
    return replace(system, matrix=scale_matrix(system.matrix, D), rhs=D * system.rhs,
                   kernel=K, scaling=D)
