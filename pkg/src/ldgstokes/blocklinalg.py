"""Block-sparse matrices with dense element blocks, plus small dense solvers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from ._kernels import SingularBlockError

__all__ = [
    "BlockSparseMatrix",
    "DenseFactorization",
    "BlockFactorization",
    "SingularBlockError",
    "spmv",
    "triple_product",
    "factor_block",
    "factor_blocks",
    "sym_eig",
]


class BlockSparseMatrix:
    """Sparse matrix of dense ``R x C`` blocks in block-row (BSR) layout.

    Row ``i`` owns blocks ``data[indptr[i]:indptr[i+1]]`` whose block
    columns ``indices[...]`` are strictly increasing.
    """

    def __init__(self, indptr, indices, data, block_rows, block_cols):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=float)
        self.block_rows = int(block_rows)
        self.block_cols = int(block_cols)
        if self.data.ndim != 3:
            raise ValueError("data must have shape (nnzb, R, C)")
        if self.indptr.shape != (self.block_rows + 1,):
            raise ValueError("indptr length does not match block_rows")
        if self.indices.shape[0] != self.data.shape[0]:
            raise ValueError("indices and data disagree on nnzb")

    # construction ---------------------------------------------------------

    @classmethod
    def from_blocks(cls, rows, cols, blocks, block_rows, block_cols, block_shape=None):
        """Build from (row, col, block) triplets; duplicates are summed."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        blocks = np.asarray(blocks, dtype=float)
        if blocks.ndim == 2:
            blocks = np.broadcast_to(blocks, (rows.shape[0],) + blocks.shape)
        if rows.shape[0] == 0:
            if block_shape is None:
                block_shape = blocks.shape[1:] if blocks.ndim == 3 else (1, 1)
            return cls.zeros(block_rows, block_cols, block_shape)
        if rows.shape != cols.shape or blocks.shape[0] != rows.shape[0]:
            raise ValueError("rows, cols and blocks must have matching length")
        if rows.min() < 0 or rows.max() >= block_rows or cols.min() < 0 or cols.max() >= block_cols:
            raise ValueError("block index out of range")
        keys = rows * block_cols + cols
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        data = np.add.reduceat(blocks[order], starts, axis=0)
        ukeys = keys[starts]
        urows = ukeys // block_cols
        indptr = np.zeros(block_rows + 1, dtype=np.int64)
        np.add.at(indptr, urows + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(indptr, ukeys % block_cols, data, block_rows, block_cols)

    @classmethod
    def zeros(cls, block_rows, block_cols, block_shape):
        R, C = block_shape
        return cls(np.zeros(block_rows + 1, dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros((0, R, C)), block_rows, block_cols)

    @classmethod
    def block_diagonal(cls, blocks):
        blocks = np.asarray(blocks, dtype=float)
        n = blocks.shape[0]
        return cls(np.arange(n + 1), np.arange(n), blocks.copy(), n, n)

    @classmethod
    def from_scipy(cls, mat, block_shape):
        R, C = block_shape
        m = sp.bsr_matrix(mat, blocksize=(R, C))
        m.sum_duplicates()
        m.sort_indices()
        nbr, nbc = m.shape[0] // R, m.shape[1] // C
        return cls(m.indptr, m.indices, m.data, nbr, nbc)

    # basic properties ------------------------------------------------------

    @property
    def block_shape(self):
        return self.data.shape[1], self.data.shape[2]

    @property
    def shape(self):
        R, C = self.block_shape
        return self.block_rows * R, self.block_cols * C

    @property
    def nnzb(self):
        return self.data.shape[0]

    def row_ids(self):
        return np.repeat(np.arange(self.block_rows), np.diff(self.indptr))

    def __repr__(self):
        return (f"BlockSparseMatrix({self.block_rows}x{self.block_cols} blocks of "
                f"{self.block_shape}, nnzb={self.nnzb})")

    # algebra ---------------------------------------------------------------

    def matvec(self, x, use_numba=None):
        return spmv(self, x, use_numba=use_numba)

    def __matmul__(self, other):
        if isinstance(other, BlockSparseMatrix):
            return self.matmul(other)
        return self.matvec(other)

    def to_scipy(self):
        R, C = self.block_shape
        return sp.bsr_matrix((self.data, self.indices, self.indptr), shape=self.shape,
                             blocksize=(R, C))

    def matmul(self, other):
        if self.block_cols != other.block_rows or self.block_shape[1] != other.block_shape[0]:
            raise ValueError(f"dimension mismatch: {self!r} @ {other!r}")
        prod = self.to_scipy() @ other.to_scipy()
        return BlockSparseMatrix.from_scipy(prod, (self.block_shape[0], other.block_shape[1]))

    def transpose(self):
        R, C = self.block_shape
        if self.nnzb == 0:
            return BlockSparseMatrix.zeros(self.block_cols, self.block_rows, (C, R))
        return BlockSparseMatrix.from_blocks(self.indices, self.row_ids(),
                                             self.data.transpose(0, 2, 1),
                                             self.block_cols, self.block_rows)

    @property
    def T(self):
        return self.transpose()

    def _check_same(self, other):
        if (self.block_rows, self.block_cols) != (other.block_rows, other.block_cols) or \
                self.block_shape != other.block_shape:
            raise ValueError(f"dimension mismatch: {self!r} vs {other!r}")

    def __add__(self, other):
        self._check_same(other)
        rows = np.concatenate([self.row_ids(), other.row_ids()])
        cols = np.concatenate([self.indices, other.indices])
        data = np.concatenate([self.data, other.data])
        return BlockSparseMatrix.from_blocks(rows, cols, data, self.block_rows, self.block_cols,
                                             self.block_shape)

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def scaled(self, alpha):
        return BlockSparseMatrix(self.indptr.copy(), self.indices.copy(), alpha * self.data,
                                 self.block_rows, self.block_cols)

    def __mul__(self, alpha):
        return self.scaled(float(alpha))

    __rmul__ = __mul__

    def toarray(self):
        R, C = self.block_shape
        out = np.zeros(self.shape)
        rows = self.row_ids()
        for k in range(self.nnzb):
            i, j = rows[k], self.indices[k]
            out[i * R:(i + 1) * R, j * C:(j + 1) * C] += self.data[k]
        return out

    def diagonal_blocks(self):
        """Blocks ``(i, i)``; zero where absent.  Requires square blocks."""
        R, C = self.block_shape
        n = min(self.block_rows, self.block_cols)
        out = np.zeros((n, R, C))
        rows = self.row_ids()
        on = rows == self.indices
        out[rows[on]] = self.data[on]
        return out

    def diagonal_positions(self):
        """Index into ``data`` of each diagonal block (``-1`` if missing)."""
        pos = np.full(self.block_rows, -1, dtype=np.int64)
        rows = self.row_ids()
        on = rows == self.indices
        pos[rows[on]] = np.flatnonzero(on)
        return pos

    def frobenius_norm(self):
        return float(np.sqrt(np.sum(self.data * self.data)))

    def block_norms(self):
        return np.sqrt(np.einsum("kab,kab->k", self.data, self.data))


def spmv(A: BlockSparseMatrix, x, use_numba=None):
    """Block-sparse matrix-vector product on flat vectors."""
    R, C = A.block_shape
    x = np.asarray(x, dtype=float)
    if x.shape != (A.block_cols * C,):
        raise ValueError(f"vector of length {x.shape} does not conform to {A!r}")
    out = _kernels.bsr_spmv(A.indptr, A.indices, A.data, x.reshape(A.block_cols, C),
                            A.block_rows, use_numba=use_numba)
    return out.reshape(-1)


def triple_product(R: BlockSparseMatrix, A: BlockSparseMatrix, P: BlockSparseMatrix):
    """Return ``R @ A @ P`` with merged sparsity."""
    return R.matmul(A).matmul(P)


# --------------------------------------------------------------------------
# dense factorizations
# --------------------------------------------------------------------------

@dataclass
class BlockFactorization:
    """Row-pivoted LU factors of a stack of square blocks."""

    lu: np.ndarray
    piv: np.ndarray

    def solve(self, rhs, use_numba=None):
        rhs = np.asarray(rhs, dtype=float)
        return _kernels.lu_solve_batch(self.lu, self.piv, rhs, use_numba=use_numba)


def factor_blocks(blocks, rel_tol=1e-14, use_numba=None) -> BlockFactorization:
    """Factor every block; raises :class:`SingularBlockError` naming the first bad block."""
    lu, piv = _kernels.lu_factor_batch(blocks, rel_tol=rel_tol, use_numba=use_numba)
    return BlockFactorization(lu, piv)


@dataclass
class DenseFactorization:
    lu: np.ndarray
    piv: np.ndarray

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        return _kernels.lu_solve_batch(self.lu[None], self.piv[None], b[None])[0]


def factor_block(A, rel_tol=1e-14, block_id=0) -> DenseFactorization:
    """Pivoted LU of one square block, usable on symmetric indefinite input."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("factor_block needs a square matrix")
    try:
        f = factor_blocks(A[None], rel_tol=rel_tol)
    except SingularBlockError as err:
        raise SingularBlockError(block_id, err.pivot, err.scale) from None
    return DenseFactorization(f.lu[0], f.piv[0])


def sym_eig(A):
    """Eigen-decomposition ``A = Q diag(w) Q^T`` of a (nearly) symmetric matrix.

    The input is symmetrized first; eigenvalues come back ascending.
    """
    A = np.asarray(A, dtype=float)
    return np.linalg.eigh(0.5 * (A + A.T))


def aligned_blocks(A, B, block_shape):
    """Blocks of two same-shape scipy matrices on their union block pattern.

    Returns ``(rows, cols, blocks_A, blocks_B)``.
    """
    BA = BlockSparseMatrix.from_scipy(A, block_shape)
    BB = BlockSparseMatrix.from_scipy(B, block_shape)
    ka = BA.row_ids() * BA.block_cols + BA.indices
    kb = BB.row_ids() * BB.block_cols + BB.indices
    keys = np.union1d(ka, kb)
    da = np.zeros((keys.shape[0],) + tuple(block_shape))
    db = np.zeros_like(da)
    da[np.searchsorted(keys, ka)] = BA.data
    db[np.searchsorted(keys, kb)] = BB.data
    return keys // BA.block_cols, keys % BA.block_cols, da, db
