"""Compressed sparse storage for symmetric positive-definite matrices.

Only the lower triangle is stored, column compressed, with the diagonal
entry structurally present and first in every column.  Positive
definiteness is a contract checked at factorization time, not here.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, StructureError


class SparseSymMatrix:
    """Lower-triangular CSC storage of a symmetric sparse matrix.

    Parameters
    ----------
    n : int
        Dimension.
    indptr, indices, data : arrays
        CSC arrays of the lower triangle.  Row indices must ascend within
        each column and every column must start with its diagonal entry.
    """

    __slots__ = ("n", "indptr", "indices", "data")

    def __init__(self, n, indptr, indices, data, validate: bool = True):
        self.n = int(n)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if validate:
            self._validate()

    def _validate(self):
        n = self.n
        if n < 1:
            raise StructureError("matrix dimension must be positive")
        if self.indptr.shape[0] != n + 1 or self.indptr[0] != 0:
            raise StructureError("bad column pointer array")
        if self.indices.shape[0] != self.indptr[n] or self.data.shape[0] != self.indptr[n]:
            raise StructureError("index/value arrays disagree with column pointers")
        if np.any(np.diff(self.indptr) < 1):
            raise StructureError("every column needs its diagonal entry")
        first = self.indices[self.indptr[:-1]]
        if np.any(first != np.arange(n, dtype=np.int64)):
            raise StructureError("missing diagonal entry or row above the diagonal")
        # strictly ascending rows within each column
        gaps = np.diff(self.indices)
        col_starts = self.indptr[1:-1]
        inside = np.ones(gaps.shape[0], dtype=bool)
        inside[col_starts - 1] = False
        if np.any(gaps[inside] <= 0):
            raise StructureError("row indices must ascend within each column")
        if np.any(self.indices >= n) or np.any(self.indices < 0):
            raise StructureError("row index out of range")

    # ------------------------------------------------------------------
    @property
    def nnz(self) -> int:
        return int(self.indptr[self.n])

    def diagonal(self) -> np.ndarray:
        return self.data[self.indptr[:-1]].copy()

    def diag_positions(self) -> np.ndarray:
        return self.indptr[:-1].copy()

    def with_values(self, data: np.ndarray) -> "SparseSymMatrix":
        """Same pattern, new values; pattern arrays are shared."""
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.shape[0] != self.nnz:
            raise DimensionMismatch("value array does not match pattern")
        out = SparseSymMatrix.__new__(SparseSymMatrix)
        out.n = self.n
        out.indptr = self.indptr
        out.indices = self.indices
        out.data = data
        return out

    def same_pattern(self, other: "SparseSymMatrix") -> bool:
        if self.indptr is other.indptr and self.indices is other.indices:
            return True
        return self.n == other.n and np.array_equal(
            self.indptr, other.indptr
        ) and np.array_equal(self.indices, other.indices)

    def pattern_key(self) -> bytes:
        return self.indptr.tobytes() + self.indices.tobytes()

    # ------------------------------------------------------------------
    @classmethod
    def from_coo(cls, n, rows, cols, vals) -> "SparseSymMatrix":
        """Build from lower-triangle coordinates (i >= j); duplicates sum."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if np.any(rows < cols):
            raise StructureError("from_coo expects lower-triangle entries (i >= j)")
        order = np.lexsort((rows, cols))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            keep = np.ones(rows.size, dtype=bool)
            dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
            if np.any(dup):
                vals = vals.copy()
                # collapse runs of duplicates right-to-left
                for t in np.flatnonzero(dup)[::-1]:
                    vals[t] += vals[t + 1]
                    keep[t + 1] = False
                rows, cols, vals = rows[keep], cols[keep], vals[keep]
        # force a structural diagonal
        have_diag = np.zeros(n, dtype=bool)
        have_diag[rows[rows == cols]] = True
        missing = np.flatnonzero(~have_diag).astype(np.int64)
        if missing.size:
            rows = np.concatenate([rows, missing])
            cols = np.concatenate([cols, missing])
            vals = np.concatenate([vals, np.zeros(missing.size)])
            order = np.lexsort((rows, cols))
            rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, cols + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(n, indptr, rows, vals)

    @classmethod
    def from_dense(cls, M, tol: float = 0.0) -> "SparseSymMatrix":
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise StructureError("expected a square matrix")
        if not np.allclose(M, M.T, atol=1e-12, rtol=1e-12):
            raise StructureError("matrix is not symmetric")
        n = M.shape[0]
        rows, cols = np.nonzero(np.tril(np.abs(M) > tol) | np.eye(n, dtype=bool))
        return cls.from_coo(n, rows, cols, M[rows, cols])

    @classmethod
    def from_scipy(cls, A) -> "SparseSymMatrix":
        import scipy.sparse as sp

        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise StructureError("expected a square matrix")
        diff = abs(A - A.T)
        if diff.nnz and diff.max() > 1e-12:
            raise StructureError("matrix is not structurally symmetric")
        low = sp.tril(A, format="coo")
        return cls.from_coo(A.shape[0], low.row, low.col, low.data)

    # ------------------------------------------------------------------
    def to_scipy(self):
        """Full symmetric matrix as scipy CSR."""
        import scipy.sparse as sp

        cols = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))
        low = sp.coo_matrix((self.data, (self.indices, cols)), shape=(self.n, self.n))
        off = self.indices != cols
        up = sp.coo_matrix(
            (self.data[off], (cols[off], self.indices[off])), shape=(self.n, self.n)
        )
        return (low + up).tocsr()

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        cols = np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))
        out[self.indices, cols] = self.data
        off = self.indices != cols
        out[cols[off], self.indices[off]] = self.data[off]
        return out

    def __repr__(self):
        return f"SparseSymMatrix(n={self.n}, nnz={self.nnz})"


def read_matrix_market(path) -> SparseSymMatrix:
    """Read a symmetric Matrix Market coordinate file."""
    import scipy.io

    A = scipy.io.mmread(str(path))
    return SparseSymMatrix.from_scipy(A)


def write_matrix_market(path, Q: SparseSymMatrix, comment: str = ""):
    """Write the lower triangle in symmetric coordinate format."""
    import scipy.io
    import scipy.sparse as sp

    cols = np.repeat(np.arange(Q.n, dtype=np.int64), np.diff(Q.indptr))
    low = sp.coo_matrix((Q.data, (Q.indices, cols)), shape=(Q.n, Q.n))
    scipy.io.mmwrite(str(path), low, comment=comment, symmetry="symmetric")
