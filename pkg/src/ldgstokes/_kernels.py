"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``LDGSTOKES_NUMBA`` is not set to ``0``/``false``/``off``.
Both paths implement the same arithmetic; tests run each against the other.
"""
from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("LDGSTOKES_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "off", "no")

try:
    if not _requested:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _requested


def resolve(use_numba=None):
    """Default to ``USE_NUMBA``; an explicit True degrades to numpy when numba is off."""
    return USE_NUMBA if use_numba is None else bool(use_numba) and HAVE_NUMBA


class SingularBlockError(np.linalg.LinAlgError):
    """A diagonal block could not be factorized (pivot below threshold)."""

    def __init__(self, block: int, pivot: float, scale: float):
        self.block = int(block)
        self.pivot = float(pivot)
        self.scale = float(scale)
        super().__init__(
            f"block {self.block} is numerically singular "
            f"(pivot {self.pivot:.3e}, block norm {self.scale:.3e})"
        )


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------

def _np_bsr_spmv(indptr, indices, data, x, nrows):
    R = data.shape[1]
    out = np.zeros((nrows, R))
    if data.shape[0] == 0:
        return out
    prod = np.einsum("kab,kb->ka", data, x[indices])
    counts = np.diff(indptr)
    nonempty = counts > 0
    sums = np.add.reduceat(prod, indptr[:-1][nonempty], axis=0)
    out[nonempty] = sums
    return out


def _np_lu_factor(blocks, rel_tol):
    lu = np.array(blocks, dtype=float, copy=True)
    nbatch, n, _ = lu.shape
    piv = np.zeros((nbatch, n), dtype=np.int64)
    scale = np.abs(lu).sum(axis=2).max(axis=1) if n else np.zeros(nbatch)
    idx = np.arange(nbatch)
    for k in range(n):
        p = k + np.argmax(np.abs(lu[:, k:, k]), axis=1)
        piv[:, k] = p
        swap = p != k
        if np.any(swap):
            s = idx[swap]
            rowk = lu[s, k, :].copy()
            lu[s, k, :] = lu[s, p[swap], :]
            lu[s, p[swap], :] = rowk
        pivot = lu[:, k, k]
        bad = np.abs(pivot) <= rel_tol * scale
        if np.any(bad):
            b = int(np.flatnonzero(bad)[0])
            raise SingularBlockError(b, pivot[b], scale[b])
        lu[:, k + 1:, k] /= pivot[:, None]
        lu[:, k + 1:, k + 1:] -= lu[:, k + 1:, k, None] * lu[:, k, None, k + 1:]
    return lu, piv


def _np_lu_solve(lu, piv, rhs):
    y = np.array(rhs, dtype=float, copy=True)
    nbatch, n = y.shape
    idx = np.arange(nbatch)
    for k in range(n):
        p = piv[:, k]
        swap = p != k
        if np.any(swap):
            s = idx[swap]
            tmp = y[s, k].copy()
            y[s, k] = y[s, p[swap]]
            y[s, p[swap]] = tmp
    for i in range(1, n):
        y[:, i] -= np.einsum("bj,bj->b", lu[:, i, :i], y[:, :i])
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            y[:, i] -= np.einsum("bj,bj->b", lu[:, i, i + 1:], y[:, i + 1:])
        y[:, i] /= lu[:, i, i]
    return y


_GS_CHUNK = 256


def _np_gs_rows(indptr, indices, data, lu, piv, x, b, rows):
    # rows of one color are mutually uncoupled, so a vectorized update
    # is identical to the element-by-element sweep
    for start in range(0, rows.shape[0], _GS_CHUNK):
        chunk = rows[start:start + _GS_CHUNK]
        lo = indptr[chunk]
        hi = indptr[chunk + 1]
        counts = hi - lo
        ks = np.concatenate([np.arange(a, c) for a, c in zip(lo, hi)])
        owner = np.repeat(np.arange(chunk.shape[0]), counts)
        cols = indices[ks]
        off = cols != chunk[owner]
        ks, owner, cols = ks[off], owner[off], cols[off]
        r = b[chunk].copy()
        if ks.shape[0]:
            contrib = np.einsum("kab,kb->ka", data[ks], x[cols])
            np.subtract.at(r, owner, contrib)
        x[chunk] = _np_lu_solve(lu[chunk], piv[chunk], r)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:
    njit = numba.njit(cache=True, nogil=True)

    @njit
    def _nb_bsr_spmv(indptr, indices, data, x, nrows):
        R = data.shape[1]
        C = data.shape[2]
        out = np.zeros((nrows, R))
        for i in range(nrows):
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                for a in range(R):
                    s = 0.0
                    for c in range(C):
                        s += data[k, a, c] * x[j, c]
                    out[i, a] += s
        return out

    @njit
    def _nb_lu_factor_one(a, piv, rel_tol):
        n = a.shape[0]
        scale = 0.0
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += abs(a[i, j])
            if s > scale:
                scale = s
        for k in range(n):
            p = k
            best = abs(a[k, k])
            for i in range(k + 1, n):
                v = abs(a[i, k])
                if v > best:
                    best = v
                    p = i
            piv[k] = p
            if p != k:
                for j in range(n):
                    t = a[k, j]
                    a[k, j] = a[p, j]
                    a[p, j] = t
            pv = a[k, k]
            if abs(pv) <= rel_tol * scale:
                return k, pv, scale
            for i in range(k + 1, n):
                a[i, k] /= pv
                f = a[i, k]
                if f != 0.0:
                    for j in range(k + 1, n):
                        a[i, j] -= f * a[k, j]
        return -1, 0.0, scale

    @njit
    def _nb_lu_factor_batch(lu, piv, rel_tol):
        for b in range(lu.shape[0]):
            k, pv, scale = _nb_lu_factor_one(lu[b], piv[b], rel_tol)
            if k >= 0:
                return b, pv, scale
        return -1, 0.0, 0.0

    @njit
    def _nb_lu_solve_one(a, piv, y):
        n = a.shape[0]
        for k in range(n):
            p = piv[k]
            if p != k:
                t = y[k]
                y[k] = y[p]
                y[p] = t
        for i in range(1, n):
            s = y[i]
            for j in range(i):
                s -= a[i, j] * y[j]
            y[i] = s
        for i in range(n - 1, -1, -1):
            s = y[i]
            for j in range(i + 1, n):
                s -= a[i, j] * y[j]
            y[i] = s / a[i, i]

    @njit
    def _nb_lu_solve_batch(lu, piv, rhs):
        y = rhs.copy()
        for b in range(lu.shape[0]):
            _nb_lu_solve_one(lu[b], piv[b], y[b])
        return y

    @njit
    def _nb_gs_rows(indptr, indices, data, lu, piv, x, b, rows):
        R = data.shape[1]
        r = np.empty(R)
        for t in range(rows.shape[0]):
            e = rows[t]
            for a in range(R):
                r[a] = b[e, a]
            for k in range(indptr[e], indptr[e + 1]):
                j = indices[k]
                if j == e:
                    continue
                for a in range(R):
                    s = 0.0
                    for c in range(R):
                        s += data[k, a, c] * x[j, c]
                    r[a] -= s
            _nb_lu_solve_one(lu[e], piv[e], r)
            for a in range(R):
                x[e, a] = r[a]


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def bsr_spmv(indptr, indices, data, x, nrows, use_numba=None):
    """Block-row product ``out[i] = sum_k data[k] @ x[indices[k]]``.

    ``x`` has shape ``(ncols, C)``; returns ``(nrows, R)``.
    """
    use_numba = resolve(use_numba)
    x = np.ascontiguousarray(x, dtype=float)
    if use_numba:
        return _nb_bsr_spmv(indptr, indices, data, x, nrows)
    return _np_bsr_spmv(indptr, indices, data, x, nrows)


def lu_factor_batch(blocks, rel_tol=1e-14, use_numba=None):
    """Row-pivoted LU of a stack of square blocks; returns ``(lu, piv)``."""
    use_numba = resolve(use_numba)
    blocks = np.asarray(blocks, dtype=float)
    if not use_numba:
        return _np_lu_factor(blocks, rel_tol)
    lu = np.array(blocks, copy=True)
    piv = np.zeros(blocks.shape[:2], dtype=np.int64)
    bad, pv, scale = _nb_lu_factor_batch(lu, piv, rel_tol)
    if bad >= 0:
        raise SingularBlockError(bad, pv, scale)
    return lu, piv


def lu_solve_batch(lu, piv, rhs, use_numba=None):
    use_numba = resolve(use_numba)
    rhs = np.asarray(rhs, dtype=float)
    if use_numba:
        return _nb_lu_solve_batch(lu, piv, np.ascontiguousarray(rhs))
    return _np_lu_solve(lu, piv, rhs)


def gs_rows(indptr, indices, data, lu, piv, x, b, rows, use_numba=None):
    """In-place block Gauss-Seidel update of ``x`` over ``rows`` in order.

    ``x`` and ``b`` have shape ``(nblocks, R)``.  The numpy path assumes the
    rows are mutually uncoupled (one color class).
    """
    use_numba = resolve(use_numba)
    if use_numba:
        _nb_gs_rows(indptr, indices, data, lu, piv, x, b, rows)
    else:
        _np_gs_rows(indptr, indices, data, lu, piv, x, b, rows)


# --------------------------------------------------------------------------
# Gauss-Seidel on scalar CSR with contiguous element blocks
# --------------------------------------------------------------------------

if HAVE_NUMBA:
    @njit
    def _nb_csr_gs(indptr, indices, data, bs, lu, piv, x, b, order):
        r = np.empty(bs)
        for t in range(order.shape[0]):
            e = order[t]
            lo = e * bs
            hi = lo + bs
            for a in range(bs):
                row = lo + a
                s = b[row]
                for k in range(indptr[row], indptr[row + 1]):
                    j = indices[k]
                    if j < lo or j >= hi:
                        s -= data[k] * x[j]
                r[a] = s
            _nb_lu_solve_one(lu[e], piv[e], r)
            for a in range(bs):
                x[lo + a] = r[a]


def csr_gs_numba(A, bs, lu, piv, x, b, order):
    """Sequential element-block Gauss-Seidel over ``order`` (numba only)."""
    _nb_csr_gs(A.indptr, A.indices, A.data, bs, lu, piv, x, b, order)
