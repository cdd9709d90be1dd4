import numpy as np
import pytest

from ldgstokes.mesh import build_mesh
from ldgstokes.polyspace import (Basis, Quadrature, element_points, eval_field, l2_project,
                                 legendre_1d, locate, mass_matrix)


@pytest.mark.parametrize("p", [0, 1, 3, 5])
def test_legendre_orthonormal_on_unit_interval(p):
    q = Quadrature(p + 2, 1)
    V = legendre_1d(p, q.nodes_1d)
    assert np.allclose(V.T @ (q.weights_1d[:, None] * V), np.eye(p + 1), atol=1e-13)


def test_quadrature_exactness():
    q = Quadrature(4, 2)
    x, w = q.nodes(), q.weights()
    # exact for degree 7 per axis
    assert np.isclose((w * x[:, 0] ** 7 * x[:, 1] ** 6).sum(), 1 / 8 / 7)


@pytest.mark.parametrize("dim", [2, 3])
def test_mass_matrix_identity(dim):
    m = build_mesh(dim, 2)
    b = Basis(2, dim, m.h)
    M = mass_matrix(m, b)
    assert np.allclose(M.toarray(), np.eye(M.shape[0]), atol=1e-13)


def test_weighted_mass_matches_high_order_oracle():
    m = build_mesh(2, 4)
    b = Basis(2, 2, m.h)

    def mu(x):
        return 1 + 0.5 * np.sin(4 * np.pi * x[..., 0]) * np.sin(4 * np.pi * x[..., 1])

    M = mass_matrix(m, b, mu, q=8).toarray()
    quad = Quadrature(12, 2)
    pts, w = element_points(m, quad)
    phi = b.evaluate(quad.nodes())
    for e in (0, 5):
        ref = np.einsum("q,qa,qb->ab", w * mu(pts[e]), phi, phi)
        assert np.allclose(M[e * 9:(e + 1) * 9, e * 9:(e + 1) * 9], ref, atol=1e-12)
    with pytest.raises(ValueError):
        mass_matrix(m, b, -1.0)


def test_injection_reproduces_coarse_polynomials(rng):
    p, dim = 3, 2
    coarse = Basis(p, dim, 0.5)
    fine = Basis(p, dim, 0.25)
    c = rng.normal(size=coarse.size)
    ref = rng.random((20, dim))
    for slot in range(4):
        off = np.array([(slot >> a) & 1 for a in range(dim)]) * 0.5
        fine_vals = fine.evaluate(ref) @ (coarse.inject(slot) @ c)
        coarse_vals = coarse.evaluate(0.5 * ref + off) @ c
        assert np.allclose(fine_vals, coarse_vals, atol=1e-13)


def test_l2_projection_is_exact_on_polynomials():
    m = build_mesh(2, 4)
    b = Basis(2, 2, m.h)
    f = l2_project(m, b, lambda x: x[..., 0] ** 2 * x[..., 1] - 3 * x[..., 1], q=4)
    pts = np.array([[0.1, 0.2], [0.77, 0.31], [0.5, 0.9]])
    vals = eval_field(f, pts)
    assert np.allclose(np.ravel(vals), pts[:, 0] ** 2 * pts[:, 1] - 3 * pts[:, 1])


def test_locate_rejects_outside_points():
    m = build_mesh(2, 4)
    e, ref = locate(m, np.array([[0.3, 0.6]]))
    assert m.centers()[e[0]].tolist() == [0.375, 0.625]
    with pytest.raises(ValueError):
        locate(m, np.array([[1.5, 0.5]]))
