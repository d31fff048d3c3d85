import numpy as np
import pytest

from mpgmres.core import CsrMatrix


def tridiag_dense(n, lo=-1.0, di=2.0, up=-1.0):
    T = np.zeros((n, n))
    np.fill_diagonal(T, di)
    for i in range(n - 1):
        T[i + 1, i] = lo
        T[i, i + 1] = up
    return T


def tridiag_csr(n, lo=-1.0, di=2.0, up=-1.0):
    return CsrMatrix.from_dense(tridiag_dense(n, lo, di, up))


def random_sparse_csr(n, density=0.02, shift=4.0, seed=0):
    """Random nonsymmetric CSR with a diagonal shift keeping it well posed."""
    rng = np.random.default_rng(seed)
    dense = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    dense += shift * np.eye(n)
    return CsrMatrix.from_dense(dense)


def bandwidth(A):
    if A.nnz == 0:
        return 0
    rows = np.repeat(np.arange(A.n_rows), np.diff(A.row_ptr))
    return int(np.abs(rows - A.col_idx).max())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
