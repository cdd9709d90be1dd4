"""Tensor-product Legendre spaces Q_p on Cartesian elements.

Basis functions are orthonormal on each physical element:
``phi_k(x) = sqrt((2k+1)/h) P_k(2x/h - 1)`` per axis, so the unweighted
mass matrix is the identity.  Element coefficients are ordered C-style
over the per-axis degrees ``(i_0, ..., i_{d-1})``.
"""
from __future__ import annotations

import inspect
from dataclasses import dataclass
from functools import reduce

import numpy as np
from numpy.polynomial import legendre as npleg

from .blocklinalg import BlockSparseMatrix

__all__ = ["Basis", "Quadrature", "DgField", "mass_matrix", "l2_project",
           "eval_field", "kron_all"]


def kron_all(mats):
    return reduce(np.kron, mats)


def legendre_1d(p, s):
    """Orthonormal Legendre values on the reference interval [0, 1].

    Returns ``(len(s), p+1)``; column k integrates to delta_kl against
    column l over [0, 1].
    """
    s = np.asarray(s, dtype=float)
    v = npleg.legvander(2.0 * s - 1.0, p)
    return v * np.sqrt(2.0 * np.arange(p + 1) + 1.0)


def legendre_1d_deriv(p, s):
    """Derivatives d/ds of :func:`legendre_1d`."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape + (p + 1,))
    for k in range(1, p + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        out[..., k] = 2.0 * npleg.legval(2.0 * s - 1.0, npleg.legder(c))
    return out * np.sqrt(2.0 * np.arange(p + 1) + 1.0)


@dataclass(frozen=True)
class Quadrature:
    """Tensor Gauss-Legendre rule with ``q`` points per axis on [0, 1]^dim."""

    q: int
    dim: int

    @property
    def nodes_1d(self):
        x, _ = npleg.leggauss(self.q)
        return 0.5 * (x + 1.0)

    @property
    def weights_1d(self):
        _, w = npleg.leggauss(self.q)
        return 0.5 * w

    def nodes(self, dim=None):
        dim = self.dim if dim is None else dim
        if dim == 0:
            return np.zeros((1, 0))
        grids = np.meshgrid(*([self.nodes_1d] * dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def weights(self, dim=None):
        dim = self.dim if dim is None else dim
        if dim == 0:
            return np.ones(1)
        return kron_all([self.weights_1d] * dim)

    def face_nodes(self, axis, side):
        """Reference nodes on the face ``x_axis = side`` (side 0 or 1)."""
        tang = self.nodes(self.dim - 1)
        pts = np.insert(tang, axis, float(side), axis=1)
        return pts, self.weights(self.dim - 1)


class Basis:
    """Orthonormal Q_p basis on an element of width ``h``."""

    def __init__(self, degree, dim, h):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = int(degree)
        self.dim = int(dim)
        self.h = float(h)
        p = self.degree
        x, w = npleg.leggauss(p + 1)
        s = 0.5 * (x + 1.0)
        w = 0.5 * w
        v = legendre_1d(p, s)
        dv = legendre_1d_deriv(p, s)
        # (1/h) int_0^h phi_a phi_b' dx in physical units
        self.deriv_1d = np.einsum("q,qa,qb->ab", w, v, dv) / self.h
        scale = np.sqrt(2.0 * np.arange(p + 1) + 1.0) / np.sqrt(self.h)
        self.trace_hi = scale.copy()
        self.trace_lo = scale * (-1.0) ** np.arange(p + 1)

    @property
    def n1(self):
        return self.degree + 1

    @property
    def size(self):
        return self.n1 ** self.dim

    def with_h(self, h):
        return Basis(self.degree, self.dim, h)

    def trace(self, side):
        return self.trace_hi if side else self.trace_lo

    def grad_matrix(self, axis):
        """Element matrix ``int phi_a d_axis phi_b``."""
        eye = np.eye(self.n1)
        return kron_all([self.deriv_1d if a == axis else eye for a in range(self.dim)])

    def face_matrix(self, axis, t_test, t_trial):
        """``int_F phi_a phi_b`` with given 1D trace vectors on the normal axis."""
        eye = np.eye(self.n1)
        outer = np.outer(t_test, t_trial)
        return kron_all([outer if a == axis else eye for a in range(self.dim)])

    def face_values(self, axis, side, tang_ref):
        """Basis values on a face at tangential reference points ``(N, d-1)``.

        The values are scaled as physical basis functions.
        """
        tang_ref = np.asarray(tang_ref, dtype=float).reshape(-1, self.dim - 1)
        pts = np.insert(tang_ref, axis, float(side), axis=1)
        return self.evaluate(pts)

    def evaluate(self, ref):
        """Physical basis values at reference points ``ref`` in [0,1]^d, ``(N, nb)``."""
        ref = np.asarray(ref, dtype=float).reshape(-1, self.dim)
        out = np.ones((ref.shape[0], 1))
        for a in range(self.dim):
            va = legendre_1d(self.degree, ref[:, a]) / np.sqrt(self.h)
            out = (out[:, :, None] * va[:, None, :]).reshape(ref.shape[0], -1)
        return out

    def evaluate_grad(self, ref):
        """Physical gradients, shape ``(N, d, nb)``."""
        ref = np.asarray(ref, dtype=float).reshape(-1, self.dim)
        N = ref.shape[0]
        vals = [legendre_1d(self.degree, ref[:, a]) / np.sqrt(self.h) for a in range(self.dim)]
        ders = [legendre_1d_deriv(self.degree, ref[:, a]) / self.h ** 1.5 for a in range(self.dim)]
        out = np.empty((N, self.dim, self.size))
        for k in range(self.dim):
            acc = np.ones((N, 1))
            for a in range(self.dim):
                va = ders[a] if a == k else vals[a]
                acc = (acc[:, :, None] * va[:, None, :]).reshape(N, -1)
            out[:, k] = acc
        return out

    def inject1d(self, child):
        """``P[a, b] = int_child phi^fine_a phi^coarse_b`` for child 0 (low) or 1 (high).

        Fine coefficients of a coarse function are ``P @ coarse``.
        """
        p = self.degree
        x, w = npleg.leggauss(p + 1)
        s = 0.5 * (x + 1.0)
        w = 0.5 * w
        fine = legendre_1d(p, s) / np.sqrt(0.5 * self.h)
        coarse = legendre_1d(p, 0.5 * (s + child)) / np.sqrt(self.h)
        return np.einsum("q,qa,qb->ab", w * 0.5 * self.h, fine, coarse)

    def inject(self, slot):
        """Element injection matrix for the child with the given slot bits."""
        return kron_all([self.inject1d((slot >> a) & 1) for a in range(self.dim)])


_SHAPES = ("scalar", "vector", "matrix")


class DgField:
    """Piecewise-polynomial field: ``coeffs[e, c, k]`` for element, component, mode."""

    def __init__(self, mesh, basis, coeffs, shape="scalar"):
        if shape not in _SHAPES:
            raise ValueError(f"unknown field shape {shape!r}")
        ncomp = {"scalar": 1, "vector": mesh.dim, "matrix": mesh.dim * mesh.dim}[shape]
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.size != mesh.n_elements * ncomp * basis.size:
            raise ValueError("coefficient count does not match mesh, shape and basis")
        self.mesh = mesh
        self.basis = basis
        self.shape = shape
        self.coeffs = coeffs.reshape(mesh.n_elements, ncomp, basis.size)

    @property
    def ncomp(self):
        return self.coeffs.shape[1]

    def component(self, c):
        return DgField(self.mesh, self.basis, self.coeffs[:, c, :].copy(), "scalar")

    def flat(self):
        return self.coeffs.reshape(-1)

    def __add__(self, other):
        return DgField(self.mesh, self.basis, self.coeffs + other.coeffs, self.shape)

    def __sub__(self, other):
        return DgField(self.mesh, self.basis, self.coeffs - other.coeffs, self.shape)

    def __mul__(self, a):
        return DgField(self.mesh, self.basis, a * self.coeffs, self.shape)

    __rmul__ = __mul__

    def __call__(self, points, side=None):
        return eval_field(self, points, side=side)


def _takes_phase(func):
    try:
        params = inspect.signature(func).parameters.values()
    except (TypeError, ValueError):
        return False
    positional = [p for p in params if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)
                  and p.default is p.empty]
    return len(positional) >= 2


def call_field_function(func, x, phase):
    """Evaluate ``func(x)`` or ``func(x, phase)`` depending on its arity."""
    if _takes_phase(func):
        return np.asarray(func(x, phase), dtype=float)
    return np.asarray(func(x), dtype=float)


def element_points(mesh, quad):
    """Physical quadrature points ``(nE, nq, d)`` and weights ``(nq,)``."""
    ref = quad.nodes()
    pts = mesh.lower_corners()[:, None, :] + mesh.h * ref[None, :, :]
    return pts, quad.weights() * mesh.h ** mesh.dim


def _weight_values(mesh, weight, pts):
    nE, nq = pts.shape[:2]
    if callable(weight):
        phase = np.broadcast_to(mesh.phase[:, None], (nE, nq))
        vals = call_field_function(weight, pts, phase)
    else:
        vals = np.asarray(weight, dtype=float)
        if vals.ndim == 1 and vals.shape[0] == nE:
            vals = vals[:, None]
    return np.broadcast_to(vals, (nE, nq))


def mass_matrix(mesh, basis, weight=1.0, q=None):
    """Block-diagonal weighted mass matrix ``int phi_a w phi_b`` per element.

    ``weight`` is a scalar, a per-element array, a ``(nE, nq)`` array, or a
    callable ``w(x)`` / ``w(x, phase)`` on points ``(nE, nq, d)``.
    """
    q = basis.degree + 2 if q is None else int(q)
    quad = Quadrature(q, mesh.dim)
    pts, w = element_points(mesh, quad)
    vals = _weight_values(mesh, weight, pts)
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
        raise ValueError("mass-matrix weight must be finite and positive at every quadrature node")
    phi = basis.evaluate(quad.nodes())
    blocks = np.einsum("qa,eq,qb->eab", phi, vals * w, phi)
    return BlockSparseMatrix.block_diagonal(blocks)


def l2_project(mesh, basis, func, q=None, shape=None):
    """Element-wise L2 projection of ``func(x)`` (or ``func(x, phase)``) onto Q_p.

    ``func`` returns ``(nE, nq)`` for scalars or ``(nE, nq, ncomp)``.
    """
    q = basis.degree + 2 if q is None else int(q)
    quad = Quadrature(q, mesh.dim)
    pts, w = element_points(mesh, quad)
    nE, nq = pts.shape[:2]
    phase = np.broadcast_to(mesh.phase[:, None], (nE, nq))
    vals = call_field_function(func, pts, phase)
    if vals.ndim <= 2:
        vals = np.broadcast_to(vals, (nE, nq))[..., None]
    vals = np.broadcast_to(vals, (nE, nq, vals.shape[-1]))
    phi = basis.evaluate(quad.nodes())
    coeffs = np.einsum("q,qk,eqc->eck", w, phi, vals)
    if shape is None:
        ncomp = coeffs.shape[1]
        shape = "scalar" if ncomp == 1 else "vector" if ncomp == mesh.dim else "matrix"
    return DgField(mesh, basis, coeffs, shape)


def locate(mesh, points, side=None):
    """Owning element and reference coordinates of physical points.

    Points on an element boundary belong to the upper element unless
    ``side=-1`` selects the lower one along every axis where the point sits
    on a face.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != mesh.dim:
        raise ValueError("points must have one coordinate per dimension")
    if np.any(pts < -1e-14) or np.any(pts > 1.0 + 1e-14):
        raise ValueError("point outside the unit box")
    s = pts * mesh.n
    idx = np.floor(s).astype(np.int64)
    if side is not None and side < 0:
        on_face = np.isclose(s, np.round(s), rtol=0.0, atol=1e-12) & (idx > 0)
        idx = np.where(on_face, np.round(s).astype(np.int64) - 1, idx)
    idx = np.clip(idx, 0, mesh.n - 1)
    ref = np.clip(s - idx, 0.0, 1.0)
    return mesh.element_id(idx), ref


def eval_field(field, points, side=None):
    """Evaluate a field at physical points; returns ``(N,)`` or ``(N, ncomp)``."""
    e, ref = locate(field.mesh, points, side=side)
    phi = field.basis.evaluate(ref)
    vals = np.einsum("nk,nck->nc", phi, field.coeffs[e])
    return vals[:, 0] if field.ncomp == 1 else vals
