"""Cartesian multi-phase meshes on the unit box and their nested hierarchy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTRAPHASE = 0
INTERPHASE = 1
DIRICHLET = 2
STRESS = 3

FACE_KINDS = {INTRAPHASE: "intraphase", INTERPHASE: "interphase",
              DIRICHLET: "boundary-dirichlet", STRESS: "boundary-stress"}

_BC_NAMES = ("periodic", "dirichlet", "stress")


@dataclass(frozen=True, eq=False)
class FaceSet:
    """All faces of a mesh as parallel arrays.

    ``minus`` is the element the normal points away from; ``plus`` is the
    element on the other side (``-1`` on boundary faces).  The unit normal is
    ``sign * e_axis``.
    """

    axis: np.ndarray
    minus: np.ndarray
    plus: np.ndarray
    kind: np.ndarray
    sign: np.ndarray
    centroid: np.ndarray

    def __len__(self):
        return self.axis.shape[0]

    def normals(self, dim):
        n = np.zeros((len(self), dim))
        n[np.arange(len(self)), self.axis] = self.sign
        return n

    def select(self, mask):
        return FaceSet(*(getattr(self, f)[mask] for f in
                         ("axis", "minus", "plus", "kind", "sign", "centroid")))


@dataclass(frozen=True, eq=False)
class CartesianMesh:
    dim: int
    n: int
    phase: np.ndarray
    periodic: tuple
    bc: dict
    faces: FaceSet = field(repr=False)

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def n_elements(self):
        return self.n ** self.dim

    @property
    def phases(self):
        return tuple(int(c) for c in np.unique(self.phase))

    def multi_index(self, e=None):
        """Integer coordinates of elements, shape ``(nE, d)`` (axis 0 slowest)."""
        e = np.arange(self.n_elements) if e is None else np.asarray(e)
        return np.stack(np.unravel_index(e, (self.n,) * self.dim), axis=-1)

    def element_id(self, idx):
        idx = np.asarray(idx)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), (self.n,) * self.dim)

    def lower_corners(self):
        return self.multi_index() * self.h

    def centers(self):
        return (self.multi_index() + 0.5) * self.h

    def phase_grid(self):
        return self.phase.reshape((self.n,) * self.dim)

    def kind_counts(self):
        return {name: int(np.sum(self.faces.kind == k)) for k, name in FACE_KINDS.items()}


def _normalize_bc(dim, bc_spec):
    """Return ``{(axis, side): name}`` with side 0 = low, 1 = high."""
    if isinstance(bc_spec, str):
        bc_spec = {(a, s): bc_spec for a in range(dim) for s in (0, 1)}
    elif isinstance(bc_spec, (list, tuple)):
        if len(bc_spec) != dim:
            raise ValueError("per-axis bc list must have one entry per axis")
        bc_spec = {(a, s): bc_spec[a] for a in range(dim) for s in (0, 1)}
    out = {}
    for a in range(dim):
        for s in (0, 1):
            name = str(bc_spec.get((a, s), "")).lower()
            if name not in _BC_NAMES:
                raise ValueError(f"unknown boundary condition {name!r} on axis {a} side {s}")
            out[(a, s)] = name
        if (out[(a, 0)] == "periodic") != (out[(a, 1)] == "periodic"):
            raise ValueError(f"axis {a}: periodicity must apply to both sides")
    return out


def _resolve_phases(dim, n, phase_assignment):
    shape = (n,) * dim
    if phase_assignment is None:
        return np.ones(n ** dim, dtype=np.int64)
    if callable(phase_assignment):
        idx = np.stack(np.unravel_index(np.arange(n ** dim), shape), axis=-1)
        centers = (idx + 0.5) / n
        phase = np.asarray(phase_assignment(centers), dtype=np.int64)
    else:
        phase = np.asarray(phase_assignment, dtype=np.int64)
    if phase.shape == shape:
        phase = phase.ravel()
    if phase.shape != (n ** dim,):
        raise ValueError("phase assignment must give one phase per element")
    return phase.copy()


def build_mesh(dim, n, phase_assignment=None, bc_spec="periodic") -> CartesianMesh:
    """Build an ``n^dim`` Cartesian mesh of the unit box and classify its faces.

    ``phase_assignment`` is ``None`` (single phase 1), an integer array with one
    entry per element, or a callable mapping element centers ``(nE, d)`` to
    phase labels.  ``bc_spec`` is ``"periodic"``, ``"dirichlet"``, ``"stress"``,
    a per-axis list, or a dict keyed by ``(axis, side)``.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"cells per axis must be a power of two >= 2, got {n}")
    bc = _normalize_bc(dim, bc_spec)
    periodic = tuple(bc[(a, 0)] == "periodic" for a in range(dim))
    phase = _resolve_phases(dim, n, phase_assignment)
    h = 1.0 / n
    shape = (n,) * dim
    ids = np.arange(n ** dim).reshape(shape)
    idx = np.stack(np.unravel_index(np.arange(n ** dim), shape), axis=-1)

    parts = []
    for a in range(dim):
        lo_ids = ids.ravel()
        hi_idx = idx.copy()
        hi_idx[:, a] += 1
        interior = hi_idx[:, a] < n
        if periodic[a]:
            hi_idx[:, a] %= n
            interior = np.ones_like(interior)
        left = lo_ids[interior]
        right = np.ravel_multi_index(tuple(hi_idx[interior].T), shape)
        cen = (idx[interior] + 0.5) * h
        cen[:, a] = (idx[interior, a] + 1) * h
        pl, pr = phase[left], phase[right]
        intra = pl == pr
        minus = np.where(intra | (pl < pr), left, right)
        plus = np.where(intra | (pl < pr), right, left)
        sign = np.where(intra | (pl < pr), 1, -1)
        kind = np.where(intra, INTRAPHASE, INTERPHASE)
        parts.append((np.full(left.shape, a), minus, plus, kind, sign, cen))
        if not periodic[a]:
            for side in (0, 1):
                sel = idx[:, a] == (0 if side == 0 else n - 1)
                el = lo_ids[sel]
                cen = (idx[sel] + 0.5) * h
                cen[:, a] = 0.0 if side == 0 else 1.0
                k = DIRICHLET if bc[(a, side)] == "dirichlet" else STRESS
                parts.append((np.full(el.shape, a), el, np.full(el.shape, -1),
                              np.full(el.shape, k), np.full(el.shape, 1 if side else -1), cen))

    faces = FaceSet(
        axis=np.concatenate([p[0] for p in parts]).astype(np.int64),
        minus=np.concatenate([p[1] for p in parts]).astype(np.int64),
        plus=np.concatenate([p[2] for p in parts]).astype(np.int64),
        kind=np.concatenate([p[3] for p in parts]).astype(np.int64),
        sign=np.concatenate([p[4] for p in parts]).astype(np.int64),
        centroid=np.concatenate([p[5] for p in parts]),
    )
    return CartesianMesh(dim, n, phase, periodic, bc, faces)


@dataclass(frozen=True, eq=False)
class HierarchyMap:
    """Nested meshes, finest first, with fine-to-coarse parent maps.

    ``parents[l][e]`` is the level ``l+1`` element containing level ``l``
    element ``e``; ``child_slot[l][e]`` encodes which of the ``2^d`` children
    it is (bit ``a`` set when it is the upper half along axis ``a``).
    """

    meshes: list
    parents: list
    child_slot: list

    @property
    def bottom_level(self):
        return len(self.meshes) - 1

    @property
    def n_levels(self):
        return len(self.meshes)

    def children(self, level):
        """``(2^d, nE_coarse)`` array of fine ids indexed by slot and parent."""
        par, slot = self.parents[level], self.child_slot[level]
        nc = self.meshes[level + 1].n_elements
        out = np.empty((2 ** self.meshes[0].dim, nc), dtype=np.int64)
        out[slot, par] = np.arange(par.shape[0])
        return out


def build_hierarchy(mesh: CartesianMesh, min_cells=2) -> HierarchyMap:
    """Coarsen by two per axis until ``min_cells`` remain or phases would mix."""
    meshes, parents, slots = [mesh], [], []
    cur = mesh
    while cur.n > min_cells:
        idx = cur.multi_index()
        cidx = idx // 2
        nc = cur.n // 2
        parent = np.ravel_multi_index(tuple(cidx.T), (nc,) * cur.dim)
        cphase = np.full(nc ** cur.dim, -1, dtype=np.int64)
        cphase[parent] = cur.phase
        if np.any(cphase[parent] != cur.phase):
            break
        slot = np.zeros(cur.n_elements, dtype=np.int64)
        for a in range(cur.dim):
            slot |= (idx[:, a] % 2) << a
        coarse = build_mesh(cur.dim, nc, cphase, cur.bc)
        meshes.append(coarse)
        parents.append(parent)
        slots.append(slot)
        cur = coarse
    return HierarchyMap(meshes, parents, slots)
