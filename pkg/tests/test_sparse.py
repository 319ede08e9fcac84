"""Lower-CSC symmetric matrix type and Matrix Market round trips."""

import numpy as np
import pytest

from parinla.errors import DimensionMismatch, StructureError
from parinla.sparse import SparseSymMatrix, read_matrix_market, write_matrix_market


def test_from_dense_round_trip():
    M = np.array([[4.0, 2.0, 0.0], [2.0, 3.0, 1.0], [0.0, 1.0, 5.0]])
    Q = SparseSymMatrix.from_dense(M)
    assert Q.nnz == 5  # 3 diagonal + 2 lower
    np.testing.assert_allclose(Q.to_dense(), M)
    np.testing.assert_allclose(Q.to_scipy().toarray(), M)


def test_diagonal_always_present():
    # structural zero diagonal entries are materialized
    Q = SparseSymMatrix.from_coo(3, [1, 2], [0, 1], [1.0, 2.0])
    assert Q.nnz == 5
    np.testing.assert_array_equal(Q.diagonal(), [0.0, 0.0, 0.0])


def test_duplicate_coo_entries_sum():
    Q = SparseSymMatrix.from_coo(2, [0, 0, 1], [0, 0, 0], [1.0, 2.0, 5.0])
    assert Q.to_dense()[0, 0] == 3.0
    assert Q.to_dense()[1, 0] == 5.0


def test_rejects_upper_entries():
    with pytest.raises(StructureError):
        SparseSymMatrix.from_coo(2, [0], [1], [1.0])


def test_rejects_asymmetric_dense():
    M = np.array([[1.0, 2.0], [0.5, 1.0]])
    with pytest.raises(StructureError):
        SparseSymMatrix.from_dense(M)


def test_validation_unsorted_rows():
    indptr = np.array([0, 3, 4])
    indices = np.array([0, 2, 1, 1])  # rows out of order in column 0
    with pytest.raises(StructureError):
        SparseSymMatrix(2, indptr, indices, np.ones(4))


def test_validation_missing_diagonal():
    indptr = np.array([0, 1, 2])
    indices = np.array([0, 0])  # column 1 lacks its diagonal
    with pytest.raises(StructureError):
        SparseSymMatrix(2, indptr, indices, np.ones(2))


def test_with_values_shares_pattern():
    Q = SparseSymMatrix.from_dense(np.array([[2.0, 1.0], [1.0, 2.0]]))
    Q2 = Q.with_values(Q.data * 3)
    assert Q2.indptr is Q.indptr
    assert Q.same_pattern(Q2)
    with pytest.raises(DimensionMismatch):
        Q.with_values(np.ones(1))


def test_matrix_market_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    M = rng.standard_normal((8, 8))
    M = M @ M.T + 8 * np.eye(8)
    M[np.abs(M) < 0.7] = 0.0
    M = 0.5 * (M + M.T)
    np.fill_diagonal(M, np.abs(np.diag(M)) + 1)
    Q = SparseSymMatrix.from_dense(M)
    path = tmp_path / "q.mtx"
    write_matrix_market(path, Q)
    back = read_matrix_market(path)
    np.testing.assert_allclose(back.to_dense(), Q.to_dense(), rtol=0, atol=1e-12)
    text = path.read_text()
    assert "symmetric" in text.splitlines()[0]
