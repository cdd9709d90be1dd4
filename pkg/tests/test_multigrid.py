import numpy as np
import pytest
import scipy.sparse as sp

from ldgstokes.blocklinalg import factor_blocks
from ldgstokes.ldg import PenaltyConfig, ProblemSpec, assemble_stokes, build_operators, stokes_matrix
from ldgstokes.mesh import build_hierarchy, build_mesh
from ldgstokes.multigrid import (BottomSolver, MgLevel, build_multigrid, coarsen, color_elements,
                                 combine_penalties, diagonal_blocks, element_graph, make_level,
                                 smooth, transfer_ops)
from ldgstokes.polyspace import Basis

PEN = PenaltyConfig.default(0, 2, 2)


def system(bc="periodic", n=8, p=2, **kw):
    m = build_mesh(2, n, None, bc)
    return assemble_stokes(m, Basis(p, 2, m.h), ProblemSpec(**kw), PenaltyConfig.default(0, 2, p))


def rel(a, b):
    a = a.toarray() if sp.issparse(a) else a
    b = b.toarray() if sp.issparse(b) else b
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture(scope="module")
def levels8():
    m = build_mesh(2, 8, None, "periodic")
    b = Basis(2, 2, m.h)
    hier = build_hierarchy(m)
    return m, b, hier, transfer_ops(hier, 0, b)


# --- transfers --------------------------------------------------------------

def test_restriction_inverts_injection(levels8, rng):
    _, _, _, T = levels8
    xc = rng.normal(size=T.stokes.shape[1])
    assert np.allclose(T.restrict(T.interpolate(xc)), xc, atol=1e-13)


def test_restriction_is_adjoint(levels8, rng):
    _, _, _, T = levels8
    xc = rng.normal(size=T.stokes.shape[1])
    xf = rng.normal(size=T.stokes.shape[0])
    assert np.isclose(T.interpolate(xc) @ xf, xc @ T.restrict(xf))


# --- coarsening -------------------------------------------------------------

def test_coarsened_operators_match_direct_assembly(levels8):
    m, b, hier, T = levels8
    prob = ProblemSpec()
    fine = build_operators(m, b, prob, PEN)
    cm = hier.meshes[1]
    direct = build_operators(cm, Basis(2, 2, cm.h), prob, PEN)
    coarse = coarsen(fine, T.scalar, cm.n_elements)
    for gc, gd in zip(coarse.G, direct.G):
        assert rel(gc, gd) < 1e-12
    assert rel(coarse.Mmu, direct.Mmu) < 1e-12
    assert rel(coarse.E, direct.E) < 1e-12
    assert rel(coarse.Et, direct.Et) < 1e-12


def test_galerkin_identity_and_prefactors(levels8):
    m, b, _, T = levels8
    fine = build_operators(m, b, ProblemSpec(), PEN)
    c = coarsen(fine, T.scalar, T.scalar.shape[1])
    I = T.scalar
    assert rel(c.E, 2.0 * (I.T @ fine.E @ I)) < 1e-14
    assert rel(c.Et, 0.5 * (I.T @ fine.Et @ I)) < 1e-14
    assert rel(c.G[0], I.T @ fine.G[0] @ I) < 1e-14


def test_coarsened_system_is_symmetric(levels8):
    m, b, _, T = levels8
    fine = build_operators(m, b, ProblemSpec(gamma=1, viscosity=2.0), PenaltyConfig.default(1, 2, 2))
    A = stokes_matrix(coarsen(fine, T.scalar, T.scalar.shape[1]))
    assert rel(A, A.T) < 1e-12


def test_recombination_of_equal_penalties_halves(rng):
    X = sp.csr_matrix(rng.normal(size=(6, 6)))
    assert rel(combine_penalties(X, X, 3), 0.5 * X) < 1e-14


def test_recombination_follows_smaller_penalty(rng):
    X = sp.csr_matrix(rng.normal(size=(6, 6)))
    out = combine_penalties(X, 1e-8 * X, 3)
    assert rel(out, 1e-8 * X) < 1e-7
    # harmonic limit: a block missing from one operator vanishes
    Y = sp.csr_matrix(np.kron(np.eye(2), np.ones((3, 3))))
    Z = sp.csr_matrix(np.kron(np.array([[1, 0], [0, 0]]), np.ones((3, 3))))
    out = combine_penalties(Y, Z, 3).toarray()
    assert np.allclose(out[:3, :3], 0.5) and not out[3:, 3:].any()


def test_timedep_coarsening_keeps_split_penalties(levels8):
    m, b, _, T = levels8
    prob = ProblemSpec(density=1.0, delta=0.1 * m.h, viscosity=1e-2)
    fine = build_operators(m, b, prob, PEN)
    c = coarsen(fine, T.scalar, T.scalar.shape[1])
    I = T.scalar
    assert rel(c.Emu, 2.0 * (I.T @ fine.Emu @ I)) < 1e-14
    assert rel(c.Erho, 0.5 * (I.T @ fine.Erho @ I)) < 1e-14
    assert rel(c.Mrho, I.T @ fine.Mrho @ I) < 1e-14


# --- smoother ---------------------------------------------------------------

def test_coloring_single_element():
    assert [list(c) for c in color_elements(sp.csr_matrix(np.eye(3)), 3)] == [[0]]


def test_coloring_chain_uses_two_colors():
    A = sp.csr_matrix(np.eye(5) + np.eye(5, k=1) + np.eye(5, k=-1))
    assert [list(c) for c in color_elements(A, 1)] == [[0, 2, 4], [1, 3]]


def test_coloring_is_independent_on_stokes_matrix():
    s = system(n=8)
    bs = 3 * 9
    colors = color_elements(s.matrix, bs)
    assert len(colors) <= 8
    assert sorted(np.concatenate(colors)) == list(range(64))
    g = element_graph(s.matrix, bs)
    for c in colors:
        assert g[c][:, c].nnz == 0


def test_one_sweep_matches_dense_block_gauss_seidel(rng):
    s = system(n=2, p=1, viscosity=1.0)
    A = s.matrix
    bs = 12
    lvl = make_level(A, bs)
    x0, b = rng.normal(size=(2, A.shape[0]))
    Ad = A.toarray()
    x = x0.copy()
    for e in lvl.order():
        r = slice(e * bs, (e + 1) * bs)
        x[r] = np.linalg.solve(Ad[r, r], b[r] - Ad[r] @ x + Ad[r, r] @ x[r])
    for use_numba in (False, True):
        y = smooth(lvl, x0.copy(), b, 1, use_numba=use_numba)
        assert np.allclose(y, x, rtol=0, atol=1e-13 * np.abs(x).max())


def test_block_diagonal_system_solved_in_one_sweep(rng):
    blocks = rng.normal(size=(5, 4, 4)) + 4 * np.eye(4)
    A = sp.block_diag(list(blocks)).tocsr()
    b = rng.normal(size=20)
    for use_numba in (False, True):
        x = smooth(make_level(A, 4), np.zeros(20), b, 1, use_numba=use_numba)
        assert np.allclose(A @ x, b, atol=1e-12)


def test_smoother_is_deterministic(rng):
    s = system(n=4)
    lvl = make_level(s.matrix, 27)
    x0, b = rng.normal(size=(2, s.matrix.shape[0]))
    a = smooth(lvl, x0.copy(), b, 2)
    c = smooth(lvl, x0.copy(), b, 2)
    assert np.array_equal(a, c)


def test_diagonal_blocks_extracts_blocks(rng):
    D = rng.normal(size=(3, 2, 2))
    A = sp.block_diag(list(D)).tocsr() + sp.csr_matrix(np.eye(6, k=2))
    out = diagonal_blocks(A, 2)
    assert np.allclose(out, D)


# --- V-cycle and bottom solver ----------------------------------------------

@pytest.mark.parametrize("bc,snapped", [("periodic", 3), ("dirichlet", 1)])
def test_bottom_solver_snaps_kernel(bc, snapped):
    mg = build_multigrid(system(bc, n=8))
    assert mg.bottom.n_snapped == snapped
    A = mg.levels[-1].matrix.toarray()
    w, Q = np.linalg.eigh(A)
    r = Q[:, np.abs(w) > 1e-8 * np.abs(w).max()] @ np.ones(int((np.abs(w) > 1e-8 * np.abs(w).max()).sum()))
    assert np.linalg.norm(A @ mg.bottom.solve(r) - r) < 1e-9 * np.linalg.norm(r)


def test_bottom_solver_rejects_nothing_when_regular(rng):
    M = rng.normal(size=(5, 5))
    M = M @ M.T + np.eye(5)
    bsol = BottomSolver.build(M)
    b = rng.normal(size=5)
    assert bsol.n_snapped == 0
    assert np.allclose(M @ bsol.solve(b), b)


def test_vcycle_is_linear(rng):
    s = system(n=8)
    mg = build_multigrid(s)
    r1, r2 = rng.normal(size=(2, s.matrix.shape[0]))
    lhs = mg.precondition(2.0 * r1 - 3.0 * r2)
    rhs = 2.0 * mg.precondition(r1) - 3.0 * mg.precondition(r2)
    assert np.allclose(lhs, rhs, atol=1e-10 * np.abs(rhs).max())


def test_vcycle_reduces_residual():
    s = system("dirichlet", n=16)
    mg = build_multigrid(s)
    x = np.random.default_rng(0).uniform(-1, 1, s.matrix.shape[0])
    b = np.zeros_like(x)
    r0 = np.linalg.norm(s.matrix @ x)
    for _ in range(3):
        mg.vcycle(x, b)
    assert np.linalg.norm(s.matrix @ x) < 1e-3 * r0


def test_hierarchy_stops_at_bottom_mesh():
    mg = build_multigrid(system(n=16))
    assert mg.n_levels == 4    # 16, 8, 4, 2
    assert isinstance(mg.levels[-1], MgLevel) and mg.levels[-1].factors is None
