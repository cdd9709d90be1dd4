import numpy as np
import pytest

from ldgstokes import _kernels
from ldgstokes._kernels import SingularBlockError

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")


def random_bsr(rng, nbr=7, R=3, density=0.4):
    rows, cols = np.nonzero(rng.random((nbr, nbr)) < density)
    keep = np.unique(np.r_[rows * nbr + cols, np.arange(nbr) * (nbr + 1)])
    rows, cols = keep // nbr, keep % nbr
    data = rng.normal(size=(rows.size, R, R))
    indptr = np.searchsorted(rows, np.arange(nbr + 1))
    dense = np.zeros((nbr * R, nbr * R))
    for r, c, blk in zip(rows, cols, data):
        dense[r * R:(r + 1) * R, c * R:(c + 1) * R] = blk
    return indptr, cols, data, dense


@pytest.mark.parametrize("use_numba", [False, pytest.param(True, marks=needs_numba)])
def test_bsr_spmv_matches_dense(rng, use_numba):
    indptr, cols, data, dense = random_bsr(rng)
    x = rng.normal(size=dense.shape[1])
    y = _kernels.bsr_spmv(indptr, cols, data, x.reshape(-1, 3), 7, use_numba=use_numba)
    assert np.allclose(y.ravel(), dense @ x, atol=1e-13)


@pytest.mark.parametrize("use_numba", [False, pytest.param(True, marks=needs_numba)])
def test_block_lu_matches_numpy_solve(rng, use_numba):
    blocks = rng.normal(size=(20, 9, 9))
    # symmetric indefinite saddle-like blocks, as in the smoother
    blocks = blocks + blocks.transpose(0, 2, 1)
    rhs = rng.normal(size=(20, 9))
    lu, piv = _kernels.lu_factor_batch(blocks, use_numba=use_numba)
    x = _kernels.lu_solve_batch(lu, piv, rhs, use_numba=use_numba)
    assert np.allclose(x, np.linalg.solve(blocks, rhs[..., None])[..., 0], rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("use_numba", [False, pytest.param(True, marks=needs_numba)])
def test_singular_block_is_named(use_numba):
    blocks = np.stack([np.eye(3), np.ones((3, 3)), np.eye(3)])
    with pytest.raises(SingularBlockError) as err:
        _kernels.lu_factor_batch(blocks, use_numba=use_numba)
    assert err.value.block == 1


@needs_numba
def test_numba_and_numpy_gauss_seidel_agree(rng):
    indptr, cols, data, dense = random_bsr(rng, nbr=6, R=2, density=1.0)
    # couple even elements only to odd ones so the evens form one color
    for r in range(6):
        for k in range(indptr[r], indptr[r + 1]):
            c = cols[k]
            if c != r and (r - c) % 2 == 0:
                data[k] = 0.0
                dense[2 * r:2 * r + 2, 2 * c:2 * c + 2] = 0.0
    for r in range(6):
        k = indptr[r] + np.searchsorted(cols[indptr[r]:indptr[r + 1]], r)
        data[k] += 8 * np.eye(2)
        dense[2 * r:2 * r + 2, 2 * r:2 * r + 2] += 8 * np.eye(2)
    diag = np.stack([dense[2 * r:2 * r + 2, 2 * r:2 * r + 2] for r in range(6)])
    lu, piv = _kernels.lu_factor_batch(diag, use_numba=False)
    b = rng.normal(size=12)
    rows = np.array([4, 0, 2])
    out = []
    for nb in (False, True):
        x = np.arange(12.0).reshape(6, 2)
        _kernels.gs_rows(indptr, cols, data, lu, piv, x, b.reshape(6, 2), rows, use_numba=nb)
        out.append(x.copy())
    assert np.allclose(out[0], out[1], atol=1e-14)
