"""Operator-coarsened geometric multigrid for the LDG Stokes system."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .blocklinalg import BlockSparseMatrix, aligned_blocks, factor_blocks, sym_eig
from .ldg import StokesOperators, StokesSystem, scale_matrix, scaling_vector, stokes_matrix
from .mesh import HierarchyMap, build_hierarchy
from .polyspace import Basis

log = logging.getLogger(__name__)

EPS_SNAP = 1e-10


# --------------------------------------------------------------------------
# transfers
# --------------------------------------------------------------------------

@dataclass
class TransferOps:
    """Injection from a coarse level to the next finer one.

    ``scalar`` acts on one scalar field; ``stokes`` on element-major Stokes
    vectors.  With orthonormal bases ``I^T I = identity`` so the L2
    restriction ``M_2h^{-1} I^T M_h`` equals ``I^T``.
    """

    scalar: sp.csr_matrix
    stokes: sp.csr_matrix

    def interpolate(self, xc):
        return self.stokes @ xc

    def restrict(self, r):
        return self.stokes.T @ r


def injection(hier: HierarchyMap, level: int, basis: Basis, ncomp: int = 1) -> sp.csr_matrix:
    """Injection matrix from level ``level+1`` to ``level`` for ``ncomp`` fields.

    Fine element blocks are ``kron(I_ncomp, P_slot)`` with the coarse-element
    basis of width ``2 h_fine``.
    """
    fine = hier.meshes[level]
    coarse_basis = Basis(basis.degree, basis.dim, 2.0 * fine.h)
    mats = np.stack([np.kron(np.eye(ncomp), coarse_basis.inject(s)) for s in range(2 ** fine.dim)])
    slot = hier.child_slot[level]
    B = BlockSparseMatrix.from_blocks(np.arange(fine.n_elements), hier.parents[level], mats[slot],
                                      fine.n_elements, hier.meshes[level + 1].n_elements)
    out = B.to_scipy().tocsr()
    out.eliminate_zeros()
    return out


def transfer_ops(hier, level, basis):
    d = basis.dim
    return TransferOps(injection(hier, level, basis, 1), injection(hier, level, basis, d + 1))


# --------------------------------------------------------------------------
# coarsening
# --------------------------------------------------------------------------

def _galerkin(I, X, factor=1.0):
    out = (I.T @ X @ I).tocsr()
    if factor != 1.0:
        out = out * factor
    out.eliminate_zeros()
    return out


def coarsen_steady(ops: StokesOperators, I: sp.csr_matrix, n_coarse: int) -> StokesOperators:
    """Galerkin coarsening with the 1/2 and 2 penalty prefactors."""
    return StokesOperators(
        dim=ops.dim, nb=ops.nb, n_elements=n_coarse, gamma=ops.gamma,
        G=[_galerkin(I, g) for g in ops.G],
        Mmu=_galerkin(I, ops.Mmu),
        Et=_galerkin(I, ops.Et, 0.5),
        E=_galerkin(I, ops.E, 2.0),
    )


def combine_penalties(Emu, Erho, nb):
    """Blockwise Frobenius-weighted harmonic recombination of two penalties."""
    rows, cols, bm, br = aligned_blocks(Emu, Erho, (nb, nb))
    nm = np.sqrt(np.einsum("kab,kab->k", bm, bm))
    nr = np.sqrt(np.einsum("kab,kab->k", br, br))
    tot = nm + nr
    safe = np.where(tot > 0, tot, 1.0)
    wm = np.where(tot > 0, (nr / safe) ** 2, 0.0)
    wr = np.where(tot > 0, (nm / safe) ** 2, 0.0)
    blocks = wm[:, None, None] * bm + wr[:, None, None] * br
    nE = Emu.shape[0] // nb
    out = BlockSparseMatrix.from_blocks(rows, cols, blocks, nE, nE, (nb, nb)).to_scipy().tocsr()
    out.eliminate_zeros()
    return out


def coarsen_timedep(ops: StokesOperators, I: sp.csr_matrix, n_coarse: int) -> StokesOperators:
    if not ops.is_timedep:
        return coarsen_steady(ops, I, n_coarse)
    Emu = _galerkin(I, ops.Emu, 2.0)
    Erho = _galerkin(I, ops.Erho, 0.5)
    return StokesOperators(
        dim=ops.dim, nb=ops.nb, n_elements=n_coarse, gamma=ops.gamma,
        G=[_galerkin(I, g) for g in ops.G],
        Mmu=_galerkin(I, ops.Mmu),
        Et=_galerkin(I, ops.Et, 0.5),
        E=combine_penalties(Emu, Erho, ops.nb),
        Mrho=_galerkin(I, ops.Mrho),
        delta=ops.delta,
        Emu=Emu,
        Erho=Erho,
    )


def coarsen(ops, I, n_coarse):
    return coarsen_timedep(ops, I, n_coarse) if ops.is_timedep else coarsen_steady(ops, I, n_coarse)


# --------------------------------------------------------------------------
# smoother
# --------------------------------------------------------------------------

def element_graph(A: sp.csr_matrix, bs: int) -> sp.csr_matrix:
    """Element adjacency (without self loops) from the matrix pattern."""
    c = A.tocoo()
    r, k = c.row // bs, c.col // bs
    off = r != k
    nE = A.shape[0] // bs
    g = sp.csr_matrix((np.ones(int(off.sum()), dtype=np.int8), (r[off], k[off])), shape=(nE, nE))
    g.sum_duplicates()
    return g


def color_elements(A: sp.csr_matrix, bs: int):
    """Greedy coloring in element order; returns a list of sorted element arrays."""
    g = element_graph(A, bs)
    nE = g.shape[0]
    color = np.full(nE, -1, dtype=np.int64)
    indptr, indices = g.indptr, g.indices
    for e in range(nE):
        used = set(color[indices[indptr[e]:indptr[e + 1]]].tolist())
        c = 0
        while c in used:
            c += 1
        color[e] = c
    return [np.flatnonzero(color == c) for c in range(color.max() + 1)]


def diagonal_blocks(A: sp.csr_matrix, bs: int) -> np.ndarray:
    c = A.tocoo()
    on = (c.row // bs) == (c.col // bs)
    nE = A.shape[0] // bs
    out = np.zeros((nE, bs, bs))
    out[c.row[on] // bs, c.row[on] % bs, c.col[on] % bs] = c.data[on]
    return out


@dataclass
class MgLevel:
    matrix: sp.csr_matrix
    bs: int
    colors: list
    factors: object
    transfer: Optional[TransferOps] = None   # to the next coarser level
    ops: Optional[StokesOperators] = None
    scaling: Optional[np.ndarray] = None
    _color_rows: Optional[list] = None

    @property
    def n_elements(self):
        return self.matrix.shape[0] // self.bs

    def order(self):
        return np.concatenate(self.colors)

    def color_slices(self):
        """Row slices of the off-diagonal part, one per color (numpy path)."""
        if self._color_rows is None:
            bs = self.bs
            A = self.matrix.tocoo()
            off = (A.row // bs) != (A.col // bs)
            Aoff = sp.csr_matrix((A.data[off], (A.row[off], A.col[off])), shape=A.shape)
            out = []
            for elems in self.colors:
                rows = (elems[:, None] * bs + np.arange(bs)).ravel()
                out.append((rows, Aoff[rows]))
            self._color_rows = out
        return self._color_rows


def make_level(A, bs, ops=None, scaling=None, transfer=None, use_numba=None):
    colors = color_elements(A, bs)
    factors = factor_blocks(diagonal_blocks(A, bs), use_numba=use_numba)
    return MgLevel(A, bs, colors, factors, transfer, ops, scaling)


def smooth(level: MgLevel, x, b, sweeps=1, use_numba=None):
    """Multicolor element-block Gauss-Seidel, in place on ``x``."""
    use_numba = _kernels.resolve(use_numba)
    bs = level.bs
    lu, piv = level.factors.lu, level.factors.piv
    if use_numba:
        order = level.order()
        for _ in range(sweeps):
            _kernels.csr_gs_numba(level.matrix, bs, lu, piv, x, b, order)
        return x
    slices = level.color_slices()
    for _ in range(sweeps):
        for elems, (rows, Aoff) in zip(level.colors, slices):
            r = (b[rows] - Aoff @ x).reshape(-1, bs)
            x[rows] = _kernels.lu_solve_batch(lu[elems], piv[elems], r, use_numba=False).reshape(-1)
    return x


# --------------------------------------------------------------------------
# bottom solver
# --------------------------------------------------------------------------

@dataclass
class BottomSolver:
    Q: np.ndarray
    inv: np.ndarray
    n_snapped: int
    eigenvalues: np.ndarray

    @classmethod
    def build(cls, A, eps=EPS_SNAP):
        w, Q = sym_eig(A.toarray() if sp.issparse(A) else np.asarray(A))
        cut = eps * np.max(np.abs(w))
        keep = np.abs(w) > cut
        inv = np.zeros_like(w)
        inv[keep] = 1.0 / w[keep]
        return cls(Q, inv, int((~keep).sum()), w)

    def solve(self, b):
        return self.Q @ (self.inv * (self.Q.T @ b))


def bottom_solve(solver: BottomSolver, b):
    return solver.solve(b)


# --------------------------------------------------------------------------
# hierarchy and V-cycle
# --------------------------------------------------------------------------

@dataclass
class MgHierarchy:
    levels: list
    bottom: BottomSolver
    nu1: int = 3
    nu2: int = 3
    use_numba: Optional[bool] = None

    @property
    def n_levels(self):
        return len(self.levels)

    def vcycle(self, x, b):
        return vcycle(self, x, b)

    def precondition(self, r):
        return vcycle(self, np.zeros_like(r), r)


def build_hierarchy_ops(system: StokesSystem, hier: HierarchyMap):
    """Operators and transfers on every level, finest first."""
    ops = [system.ops]
    transfers = []
    for lvl in range(hier.n_levels - 1):
        T = transfer_ops(hier, lvl, system.basis)
        transfers.append(T)
        ops.append(coarsen(ops[-1], T.scalar, hier.meshes[lvl + 1].n_elements))
    return ops, transfers


def build_multigrid(system: StokesSystem, nu1=3, nu2=3, use_numba=None, hier=None) -> MgHierarchy:
    """Coarsen the system's operators down the mesh hierarchy and set up smoothers.

    When ``system`` is diagonally scaled, every level is scaled with its own
    element-average viscosity.
    """
    hier = build_hierarchy(system.mesh) if hier is None else hier
    ops, transfers = build_hierarchy_ops(system, hier)
    scaled = system.scaling is not None
    levels = []
    for lvl, op in enumerate(ops):
        if lvl == 0:
            A, D = system.matrix, system.scaling
        else:
            A = stokes_matrix(op)
            D = None
            if scaled:
                D = scaling_vector(op)
                A = scale_matrix(A, D)
        T = transfers[lvl] if lvl < len(transfers) else None
        if lvl == len(ops) - 1:
            levels.append(MgLevel(A, op.bs, [np.arange(op.n_elements)], None, None, op, D))
        else:
            levels.append(make_level(A, op.bs, op, D, T, use_numba=use_numba))
    bottom = BottomSolver.build(levels[-1].matrix)
    log.debug("multigrid: %d levels, bottom snapped %d modes", len(levels), bottom.n_snapped)
    return MgHierarchy(levels, bottom, nu1, nu2, use_numba)


def vcycle(mg: MgHierarchy, x, b, level=0):
    """One V-cycle; ``x`` is updated in place and returned."""
    if level == mg.n_levels - 1:
        x[:] = mg.bottom.solve(b)
        return x
    L = mg.levels[level]
    smooth(L, x, b, mg.nu1, mg.use_numba)
    r = b - L.matrix @ x
    rc = L.transfer.restrict(r)
    xc = vcycle(mg, np.zeros_like(rc), rc, level + 1)
    x += L.transfer.interpolate(xc)
    smooth(L, x, b, mg.nu2, mg.use_numba)
    return x


# --------------------------------------------------------------------------
# direct solves (verification)
# --------------------------------------------------------------------------

def direct_solve(system: StokesSystem):
    """Kernel-orthogonal solution by a bordered sparse LU factorization."""
    A, K = system.matrix, system.kernel
    m = K.shape[1]
    if m:
        Ks = sp.csr_matrix(K)
        B = sp.bmat([[A, Ks], [Ks.T, None]]).tocsc()
        rhs = np.concatenate([system.rhs, np.zeros(m)])
    else:
        B, rhs = A.tocsc(), system.rhs
    x = spla.splu(B).solve(rhs)
    return x[:A.shape[0]]


def pinv_solve(system: StokesSystem, eps=EPS_SNAP):
    """Dense pseudo-inverse solve (small systems only)."""
    return BottomSolver.build(system.matrix, eps).solve(system.rhs)
