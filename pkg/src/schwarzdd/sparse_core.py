"""CSR matrices and the kernel set every other module consumes.

Conventions used throughout the package:

* a matrix is a `CsrMatrix` in canonical form (row pointers nondecreasing,
  column indices strictly increasing inside each row, no duplicates),
* an index set ("index map") is a sorted unique int64 numpy array,
* dense column blocks (null spaces, coarse basis blocks, Krylov bases) are
  plain 2-D numpy arrays,
* restriction/prolongation between index sets is gather/scatter by index
  map, never a stored sparse operator.

Element type is float64 or float32; kernels compute in the element type.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k

_REAL_DTYPES = (np.float32, np.float64)


def index_map(indices) -> np.ndarray:
    """Validate and return an index map (sorted, unique, nonnegative int64)."""
    ix = np.asarray(indices, dtype=np.int64)
    if ix.ndim != 1:
        raise ValueError("index map must be one-dimensional")
    if ix.size:
        if ix[0] < 0:
            raise ValueError("index map entries must be nonnegative")
        if np.any(np.diff(ix) <= 0):
            raise ValueError("index map entries must be strictly increasing")
    return ix


@dataclass
class CsrMatrix:
    """Compressed sparse row matrix in canonical form.

    Structural zeros are first-class: an explicitly stored 0.0 stays in the
    pattern (symbolic passes depend on that).
    """

    nrows: int
    ncols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values)
        if self.values.dtype not in _REAL_DTYPES:
            raise ValueError(f"unsupported element type {self.values.dtype}")
        if self.nrows < 0 or self.ncols < 0:
            raise ValueError("negative matrix dimension")
        if self.row_ptr.shape != (self.nrows + 1,):
            raise ValueError("row_ptr must have nrows + 1 entries")
        nnz = self.col_idx.shape[0]
        if self.values.shape != (nnz,):
            raise ValueError("col_idx and values length mismatch")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != nnz:
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if nnz:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.ncols:
                raise ValueError("column index out of range")
        if nnz > 1:
            d = np.diff(self.col_idx)
            within = np.ones(nnz - 1, dtype=bool)
            starts = self.row_ptr[1:-1]
            starts = starts[(starts > 0) & (starts < nnz)]
            within[starts - 1] = False
            if not np.all(d[within] > 0):
                raise ValueError("column indices must be strictly increasing per row")

    # -- convenience -------------------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def copy(self) -> "CsrMatrix":
        return CsrMatrix(self.nrows, self.ncols, self.row_ptr.copy(),
                         self.col_idx.copy(), self.values.copy())

    def to_dense(self) -> np.ndarray:
        d = np.zeros((self.nrows, self.ncols), dtype=self.dtype)
        rows = np.repeat(np.arange(self.nrows), np.diff(self.row_ptr))
        d[rows, self.col_idx] = self.values
        return d

    def diagonal(self) -> np.ndarray:
        d = np.zeros(min(self.nrows, self.ncols), dtype=self.dtype)
        for i in range(d.shape[0]):
            lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
            p = np.searchsorted(self.col_idx[lo:hi], i)
            if p < hi - lo and self.col_idx[lo + p] == i:
                d[i] = self.values[lo + p]
        return d

    def __matmul__(self, other):
        if isinstance(other, CsrMatrix):
            return spgemm(self, other)
        arr = np.asarray(other)
        if arr.ndim == 1:
            return spmv(self, arr)
        if arr.ndim == 2:
            if arr.shape[0] != self.ncols:
                raise ValueError("dimension mismatch in matrix product")
            out = np.empty((self.nrows, arr.shape[1]), dtype=self.dtype)
            _k.csr_matmat_dense(self.row_ptr, self.col_idx, self.values,
                                np.ascontiguousarray(arr, dtype=self.dtype), out,
                                self.dtype.type(1.0))
            return out
        raise TypeError("unsupported operand for CsrMatrix @")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_dense(cls, dense, dtype=None) -> "CsrMatrix":
        d = np.asarray(dense, dtype=dtype)
        if d.ndim != 2:
            raise ValueError("from_dense expects a 2-D array")
        if d.dtype not in _REAL_DTYPES:
            d = d.astype(np.float64)
        rows, cols = np.nonzero(d)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        row_ptr = np.zeros(d.shape[0] + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        np.cumsum(row_ptr, out=row_ptr)
        return cls(d.shape[0], d.shape[1], row_ptr, cols.astype(np.int64),
                   d[rows, cols])

    @classmethod
    def from_coo(cls, nrows, ncols, rows, cols, vals) -> "CsrMatrix":
        """Build from triplets, summing duplicates in input order."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("triplet arrays must have equal length")
        if rows.size == 0:
            return cls(nrows, ncols, np.zeros(nrows + 1, dtype=np.int64),
                       np.empty(0, dtype=np.int64), np.empty(0, dtype=vals.dtype))
        if rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols:
            raise ValueError("triplet index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        first = np.ones(rows.size, dtype=bool)
        first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(first)
        summed = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
        row_ptr = np.zeros(nrows + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        np.cumsum(row_ptr, out=row_ptr)
        return cls(nrows, ncols, row_ptr, cols, summed)

    @classmethod
    def identity(cls, n, dtype=np.float64) -> "CsrMatrix":
        return cls(n, n, np.arange(n + 1, dtype=np.int64),
                   np.arange(n, dtype=np.int64), np.ones(n, dtype=dtype))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def spmv(a: CsrMatrix, x, y=None, alpha=1.0, beta=0.0) -> np.ndarray:
    """y <- alpha * A x + beta * y, computed in A's element type.

    Row accumulation order is fixed (index order), so results are
    reproducible run to run.
    """
    x = np.ascontiguousarray(x, dtype=a.dtype)
    if x.shape != (a.ncols,):
        raise ValueError(f"spmv dimension mismatch: A is {a.nrows}x{a.ncols}, "
                         f"x has length {x.shape[0]}")
    if y is None:
        y = np.zeros(a.nrows, dtype=a.dtype)
        beta = 0.0
    else:
        if y.shape != (a.nrows,) or y.dtype != a.dtype:
            raise ValueError("spmv output vector has wrong shape or dtype")
    _k.spmv(a.row_ptr, a.col_idx, a.values, x, y,
            a.dtype.type(alpha), a.dtype.type(beta))
    return y


def spgemm(a: CsrMatrix, b: CsrMatrix) -> CsrMatrix:
    """Sparse matrix product A @ B.

    The result pattern is the structural product pattern: entries that
    cancel to exactly 0.0 are retained, keeping downstream symbolic passes
    independent of numerical luck.
    """
    if a.ncols != b.nrows:
        raise ValueError(f"spgemm dimension mismatch: {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError("spgemm operands must share an element type")
    counts = _k.spgemm_count(a.row_ptr, a.col_idx, b.row_ptr, b.col_idx,
                             a.nrows, b.ncols)
    out_ptr = np.cumsum(counts, dtype=np.int64)
    out_idx = np.empty(out_ptr[-1], dtype=np.int64)
    out_val = np.empty(out_ptr[-1], dtype=a.dtype)
    _k.spgemm_fill(a.row_ptr, a.col_idx, a.values, b.row_ptr, b.col_idx,
                   b.values, out_ptr, out_idx, out_val, b.ncols)
    # rows arrive in discovery order; sort each row by column index
    rows = np.repeat(np.arange(a.nrows, dtype=np.int64), np.diff(out_ptr))
    order = np.lexsort((out_idx, rows))
    return CsrMatrix(a.nrows, b.ncols, out_ptr, out_idx[order], out_val[order])


def transpose(a: CsrMatrix) -> CsrMatrix:
    t_ptr, t_idx, t_val = _k.csr_transpose(a.nrows, a.ncols, a.row_ptr,
                                           a.col_idx, a.values)
    return CsrMatrix(a.ncols, a.nrows, t_ptr, t_idx, t_val)


def extract_submatrix(a: CsrMatrix, rows, cols) -> CsrMatrix:
    """Gather the submatrix A[rows, cols] for two index maps.

    result(i, j) = A(rows[i], cols[j]); values are copied, no arithmetic.
    """
    rows = index_map(rows)
    cols = index_map(cols)
    if rows.size and rows[-1] >= a.nrows:
        raise ValueError("row index out of range in extract_submatrix")
    if cols.size and cols[-1] >= a.ncols:
        raise ValueError("column index out of range in extract_submatrix")
    col_map = np.full(a.ncols, -1, dtype=np.int64)
    col_map[cols] = np.arange(cols.size, dtype=np.int64)
    out_ptr, out_idx, out_val = _k.csr_gather(a.row_ptr, a.col_idx, a.values,
                                              rows, col_map)
    return CsrMatrix(rows.size, cols.size, out_ptr, out_idx, out_val)


def permute_symmetric(a: CsrMatrix, perm) -> CsrMatrix:
    """Symmetric permutation: result(i, j) = A(perm[i], perm[j])."""
    if a.nrows != a.ncols:
        raise ValueError("permute_symmetric needs a square matrix")
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (a.nrows,) or np.any(np.sort(perm) != np.arange(a.nrows)):
        raise ValueError("perm is not a permutation of 0..n-1")
    inv = np.empty_like(perm)
    inv[perm] = np.arange(a.nrows, dtype=np.int64)
    out_ptr, out_idx, out_val = _k.csr_gather(a.row_ptr, a.col_idx, a.values,
                                              perm, inv)
    return CsrMatrix(a.nrows, a.ncols, out_ptr, out_idx, out_val)


def convert_precision(a: CsrMatrix, dtype) -> CsrMatrix:
    """Copy A into another element type (same pattern).

    Narrowing to float32 raises if any finite entry overflows; widening is
    exact (and round-trips the narrow value bit for bit).
    """
    dtype = np.dtype(dtype)
    if dtype not in _REAL_DTYPES:
        raise ValueError(f"unsupported element type {dtype}")
    with np.errstate(over="ignore"):
        vals = a.values.astype(dtype)
    if dtype == np.float32 and a.dtype == np.float64:
        bad = np.isinf(vals) & np.isfinite(a.values)
        if np.any(bad):
            p = int(np.flatnonzero(bad)[0])
            row = int(np.searchsorted(a.row_ptr, p, side="right") - 1)
            col = int(a.col_idx[p])
            raise OverflowError(
                f"entry ({row}, {col}) = {a.values[p]!r} overflows float32")
    return CsrMatrix(a.nrows, a.ncols, a.row_ptr.copy(), a.col_idx.copy(), vals)


# ---------------------------------------------------------------------------
# MatrixMarket coordinate I/O
# ---------------------------------------------------------------------------

_MM_HEADER = "%%MatrixMarket matrix coordinate real general"


def write_matrix_market(a: CsrMatrix, path) -> None:
    """Write in 1-based coordinate format (pattern preserved, 17 significant
    digits so doubles round-trip exactly)."""
    rows = np.repeat(np.arange(1, a.nrows + 1), np.diff(a.row_ptr))
    with open(path, "w") as f:
        f.write(_MM_HEADER + "\n")
        f.write(f"{a.nrows} {a.ncols} {a.nnz}\n")
        for r, c, v in zip(rows, a.col_idx + 1, a.values):
            f.write("%d %d %.17g\n" % (r, c, v))


def read_matrix_market(path) -> CsrMatrix:
    with open(path) as f:
        header = f.readline().strip()
        if header.lower() != _MM_HEADER.lower():
            raise ValueError(f"unsupported MatrixMarket header: {header!r}")
        line = f.readline()
        while line.startswith("%"):
            line = f.readline()
        nrows, ncols, nnz = (int(t) for t in line.split())
        body = f.read()
    if nnz:
        data = np.loadtxt(io.StringIO(body), ndmin=2)
        if data.shape != (nnz, 3):
            raise ValueError("MatrixMarket body does not match declared nnz")
        rows = data[:, 0].astype(np.int64) - 1
        cols = data[:, 1].astype(np.int64) - 1
        vals = data[:, 2]
    else:
        rows = np.empty(0, dtype=np.int64)
        cols = np.empty(0, dtype=np.int64)
        vals = np.empty(0, dtype=np.float64)
    return CsrMatrix.from_coo(nrows, ncols, rows, cols, vals)
