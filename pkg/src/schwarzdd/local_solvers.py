"""Subdomain and coarse solvers with a three-phase lifecycle.

Phase split:

* symbolic: fill-reducing ordering, fill pattern of L and U, level schedules
  for the triangular solves. Depends on the pattern only and is reusable
  across refactorizations (bitwise identical for identical patterns).
* numeric: values of L and U on the symbolic pattern. Exact LU and ILU(k)
  share one pattern-restricted IKJ kernel; the fixed-point variant runs
  synchronous Jacobi sweeps over the pattern entries instead.
* solve: level-scheduled forward/backward substitution, or the fixed-point
  (Jacobi) triangular iteration for the fast variant.

No pivoting anywhere: targets are near-SPD subdomain blocks, and symbolic
reuse would not survive pivoting. A tiny pivot (|u_ii| <= 1e-14 * ||A||_inf)
raises instead.

L has a unit diagonal (not stored); U stores its diagonal first in each row.
Orderings act symmetrically: the factored matrix is B(i,j) = A(perm[i],
perm[j]), and solves map b/x back and forth internally.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .sparse_core import CsrMatrix, extract_submatrix, permute_symmetric

LOCAL_SOLVER_METHODS = ("exact_lu", "ilu_k", "fast_ilu")


@dataclass
class Ordering:
    kind: str
    perm: np.ndarray           # new position -> original index
    inverse_perm: np.ndarray

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        self.inverse_perm = np.asarray(self.inverse_perm, dtype=np.int64)
        if not np.array_equal(self.perm[self.inverse_perm],
                              np.arange(self.perm.size)):
            raise ValueError("perm and inverse_perm are not inverses")


def order_natural(n: int) -> Ordering:
    ident = np.arange(n, dtype=np.int64)
    return Ordering("natural", ident, ident.copy())


def _invert(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size, dtype=np.int64)
    return inv


def _symmetrized_pattern(a: CsrMatrix):
    """Pattern of A + A^T as (indptr, indices)."""
    n = a.nrows
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(a.row_ptr))
    lin = rows * n + a.col_idx
    lin_t = a.col_idx * n + rows
    lin = np.unique(np.concatenate([lin, lin_t]))
    rows, cols = lin // n, lin % n
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    return np.cumsum(ptr), cols


def _components(p: CsrMatrix):
    n = p.nrows
    visited = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if visited[start]:
            continue
        lev = np.full(n, -1, dtype=np.int64)
        _k.bfs_levels(p.row_ptr, p.col_idx, start, lev)
        comp = np.flatnonzero(lev >= 0)
        visited[comp] = True
        comps.append(comp.astype(np.int64))
    return comps


def _peripheral_levels(sub: CsrMatrix):
    # BFS levels from a pseudo-peripheral vertex (two to four sweeps)
    n = sub.nrows
    lev = np.full(n, -1, dtype=np.int64)
    _k.bfs_levels(sub.row_ptr, sub.col_idx, 0, lev)
    ecc = int(lev.max())
    for _ in range(3):
        cand = int(np.flatnonzero(lev == ecc)[0])
        lev2 = np.full(n, -1, dtype=np.int64)
        _k.bfs_levels(sub.row_ptr, sub.col_idx, cand, lev2)
        ecc2 = int(lev2.max())
        lev = lev2
        if ecc2 <= ecc:
            break
        ecc = ecc2
    return lev


def _dissect(p: CsrMatrix, leaf_size: int) -> np.ndarray:
    n = p.nrows
    if n <= leaf_size:
        return np.arange(n, dtype=np.int64)
    out = []
    for comp in _components(p):
        if comp.size <= leaf_size:
            out.append(comp)
            continue
        sub = extract_submatrix(p, comp, comp)
        lev = _peripheral_levels(sub)
        median = np.lexsort((np.arange(comp.size), lev))[comp.size // 2]
        sep_level = lev[median]
        halves = [np.flatnonzero(lev < sep_level),
                  np.flatnonzero(lev > sep_level)]
        if halves[0].size == 0 or halves[1].size == 0:
            out.append(comp)        # flat level structure, nothing to split
            continue
        halves.sort(key=lambda h: comp[h[0]])
        for half in halves:
            inner = extract_submatrix(sub, half, half)
            out.append(comp[half[_dissect(inner, leaf_size)]])
        out.append(comp[np.flatnonzero(lev == sep_level)])
    return np.concatenate(out)


def order_nested_dissection(a: CsrMatrix, leaf_size: int = 32) -> Ordering:
    """Recursive bisection: split each part at the median BFS level seen from
    a pseudo-peripheral vertex, order the separator level last, recurse until
    parts have at most `leaf_size` vertices (those stay in natural order).
    Disconnected graphs are handled per component."""
    if a.nrows != a.ncols:
        raise ValueError("ordering needs a square operator")
    ptr, idx = _symmetrized_pattern(a)
    pattern = CsrMatrix(a.nrows, a.ncols, ptr, idx, np.ones(idx.size))
    perm = _dissect(pattern, leaf_size)
    return Ordering("nested_dissection", perm, _invert(perm))


def make_ordering(a: CsrMatrix, kind: str) -> Ordering:
    if kind == "natural":
        return order_natural(a.nrows)
    if kind == "nested_dissection":
        return order_nested_dissection(a)
    raise ValueError(f"unknown ordering kind {kind!r}")


# ---------------------------------------------------------------------------
# symbolic phase
# ---------------------------------------------------------------------------

@dataclass
class SymbolicFactorization:
    n: int
    kind: str                  # "exact" | "ilu"
    fill_level: int | None     # None for exact
    ordering: Ordering
    l_ptr: np.ndarray          # strict lower pattern, sorted rows
    l_idx: np.ndarray
    u_ptr: np.ndarray          # upper pattern, diagonal first in each row
    u_idx: np.ndarray
    l_level_ptr: np.ndarray    # forward-solve schedule
    l_level_rows: np.ndarray
    u_level_ptr: np.ndarray    # backward-solve schedule
    u_level_rows: np.ndarray
    structure_hash: str

    @property
    def fill_nnz(self) -> int:
        return int(self.l_idx.size + self.u_idx.size)

    @property
    def n_levels(self):
        return (self.l_level_ptr.size - 1, self.u_level_ptr.size - 1)


def _schedule(levels):
    nlev = int(levels.max()) + 1 if levels.size else 0
    counts = np.bincount(levels, minlength=nlev)
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    rows = np.argsort(levels, kind="stable").astype(np.int64)
    return ptr, rows


def _finish_symbolic(n, kind, fill_level, ordering, l_ptr, l_idx, u_ptr, u_idx):
    l_level_ptr, l_level_rows = _schedule(
        _k.dependency_levels_lower(n, l_ptr, l_idx))
    u_level_ptr, u_level_rows = _schedule(
        _k.dependency_levels_upper(n, u_ptr, u_idx))
    h = hashlib.sha256()
    h.update(f"{n}|{kind}|{fill_level}|{ordering.kind}".encode())
    for arr in (ordering.perm, l_ptr, l_idx, u_ptr, u_idx):
        h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
    return SymbolicFactorization(
        n, kind, fill_level, ordering, l_ptr, l_idx, u_ptr, u_idx,
        l_level_ptr, l_level_rows, u_level_ptr, u_level_rows, h.hexdigest())


def symbolic_lu(a: CsrMatrix, ordering: Ordering | None = None) -> SymbolicFactorization:
    """Exact no-pivot fill pattern on the (symmetrized) permuted pattern."""
    if a.nrows != a.ncols:
        raise ValueError("factorization needs a square operator")
    n = a.nrows
    if ordering is None:
        ordering = order_natural(n)
    p = permute_symmetric(a, ordering.perm)
    sp_ptr, sp_idx = _symmetrized_pattern(p)
    parent = _k.elimination_tree(n, sp_ptr, sp_idx)
    l_ptr, l_idx = _k.lu_symbolic_rows(n, sp_ptr, sp_idx, parent)
    # pattern is symmetric, so U is structurally L^T plus the diagonal
    t_ptr, t_idx, _ = _k.pattern_transpose(n, n, l_ptr, l_idx)
    u_ptr = np.concatenate([[0], np.cumsum(np.diff(t_ptr) + 1)]).astype(np.int64)
    u_idx = np.empty(u_ptr[-1], dtype=np.int64)
    diag_pos = u_ptr[:-1]
    u_idx[diag_pos] = np.arange(n)
    rest = np.ones(u_idx.size, dtype=bool)
    rest[diag_pos] = False
    u_idx[rest] = t_idx
    return _finish_symbolic(n, "exact", None, ordering, l_ptr, l_idx, u_ptr, u_idx)


def symbolic_ilu_k(a: CsrMatrix, fill_level: int,
                   ordering: Ordering | None = None) -> SymbolicFactorization:
    """Level-of-fill pattern: keep entries whose fill level is <= fill_level,
    original entries (and the diagonal) at level 0."""
    if a.nrows != a.ncols:
        raise ValueError("factorization needs a square operator")
    if fill_level < 0:
        raise ValueError("fill level must be nonnegative")
    n = a.nrows
    if ordering is None:
        ordering = order_natural(n)
    p = permute_symmetric(a, ordering.perm)
    l_ptr, l_idx, u_ptr, u_idx = _k.iluk_symbolic(
        n, p.row_ptr, p.col_idx, fill_level)
    return _finish_symbolic(n, "ilu", fill_level, ordering,
                            l_ptr, l_idx, u_ptr, u_idx)


# ---------------------------------------------------------------------------
# numeric phase
# ---------------------------------------------------------------------------

@dataclass
class LocalFactorization:
    symbolic: SymbolicFactorization
    method: str                       # exact_lu | ilu_k | fast_ilu
    l_values: np.ndarray
    u_values: np.ndarray
    sweep_residuals: list | None = None   # fast_ilu only
    trisolve_iters: int = 5               # fast_ilu only

    @property
    def fill_nnz(self) -> int:
        return self.symbolic.fill_nnz

    def solve(self, b: np.ndarray) -> np.ndarray:
        s = self.symbolic
        x = np.asarray(b)[s.ordering.perm].astype(self.l_values.dtype)
        if self.method == "fast_ilu":
            x = _k.jacobi_trisolve_lower_unit(
                s.l_ptr, s.l_idx, self.l_values, x, self.trisolve_iters)
            x = _k.jacobi_trisolve_upper(
                s.u_ptr, s.u_idx, self.u_values, x, self.trisolve_iters)
        else:
            _k.trisolve_forward_unit(s.l_ptr, s.l_idx, self.l_values,
                                     s.l_level_ptr, s.l_level_rows, x)
            _k.trisolve_backward(s.u_ptr, s.u_idx, self.u_values,
                                 s.u_level_ptr, s.u_level_rows, x)
        out = np.empty_like(x)
        out[s.ordering.perm] = x
        return out

    def solve_many(self, b: np.ndarray) -> np.ndarray:
        """Multi right-hand-side solve, b of shape (n, nrhs)."""
        s = self.symbolic
        if self.method == "fast_ilu":
            cols = [self.solve(b[:, c]) for c in range(b.shape[1])]
            return np.stack(cols, axis=1)
        x = np.ascontiguousarray(np.asarray(b)[s.ordering.perm],
                                 dtype=self.l_values.dtype)
        _k.trisolve_forward_unit_multi(s.l_ptr, s.l_idx, self.l_values,
                                       s.l_level_ptr, s.l_level_rows, x)
        _k.trisolve_backward_multi(s.u_ptr, s.u_idx, self.u_values,
                                   s.u_level_ptr, s.u_level_rows, x)
        out = np.empty_like(x)
        out[s.ordering.perm] = x
        return out


def _norm_inf(p: CsrMatrix) -> float:
    if p.values.size == 0:
        return 0.0
    sums = np.zeros(p.nrows)
    np.add.at(sums, np.repeat(np.arange(p.nrows), np.diff(p.row_ptr)),
              np.abs(p.values.astype(np.float64)))
    return float(sums.max())


def _numeric(a: CsrMatrix, sym: SymbolicFactorization, diag_shift: float):
    if a.nrows != sym.n:
        raise ValueError("matrix size does not match the symbolic phase")
    p = permute_symmetric(a, sym.ordering.perm)
    vals = p.values
    if diag_shift:
        rows = np.repeat(np.arange(p.nrows), np.diff(p.row_ptr))
        vals = vals.copy()
        vals[p.col_idx == rows] += vals.dtype.type(diag_shift)
    tol = 1e-14 * _norm_inf(p)
    l_values = np.zeros(sym.l_idx.size, dtype=vals.dtype)
    u_values = np.zeros(sym.u_idx.size, dtype=vals.dtype)
    rc = _k.lu_numeric(sym.n, sym.l_ptr, sym.l_idx, sym.u_ptr, sym.u_idx,
                       p.row_ptr, p.col_idx, vals, l_values, u_values, tol)
    if rc:
        row = int(sym.ordering.perm[rc - 1])
        raise np.linalg.LinAlgError(
            f"pivot too small at row {row} (|u_ii| <= 1e-14 * ||A||_inf); "
            "the operator is singular or needs a different ordering")
    return l_values, u_values


def numeric_lu(a: CsrMatrix, sym: SymbolicFactorization) -> LocalFactorization:
    if sym.kind != "exact":
        raise ValueError("numeric_lu needs an exact symbolic phase")
    l_values, u_values = _numeric(a, sym, 0.0)
    return LocalFactorization(sym, "exact_lu", l_values, u_values)


def numeric_ilu(a: CsrMatrix, sym: SymbolicFactorization,
                diag_shift: float = 0.0) -> LocalFactorization:
    if sym.kind != "ilu":
        raise ValueError("numeric_ilu needs an ilu symbolic phase")
    l_values, u_values = _numeric(a, sym, diag_shift)
    return LocalFactorization(sym, "ilu_k", l_values, u_values)


def fast_ilu_numeric(a: CsrMatrix, sym: SymbolicFactorization,
                     factor_sweeps: int = 3,
                     trisolve_iters: int = 5) -> LocalFactorization:
    """Fixed-point ILU: synchronous Jacobi sweeps over the pattern entries,
    each entry updated from the previous iterate (double buffered). Records
    the nonlinear residual sum_{(i,j) in pattern(A)} |A_ij - (LU)_ij| after
    every sweep."""
    if sym.kind != "ilu":
        raise ValueError("fast_ilu_numeric needs an ilu symbolic phase")
    if factor_sweeps < 1:
        raise ValueError("factor_sweeps must be at least 1")
    if trisolve_iters < 1:
        raise ValueError("trisolve_iters must be at least 1")
    p = permute_symmetric(a, sym.ordering.perm)
    vals = p.values
    n = sym.n

    a_of_l = _k.align_pattern(p.row_ptr, p.col_idx, sym.l_ptr, sym.l_idx)
    a_of_u = _k.align_pattern(p.row_ptr, p.col_idx, sym.u_ptr, sym.u_idx)
    l_of_a = _k.align_pattern(sym.l_ptr, sym.l_idx, p.row_ptr, p.col_idx)
    u_of_a = _k.align_pattern(sym.u_ptr, sym.u_idx, p.row_ptr, p.col_idx)
    uc_ptr, uc_rows, uc_src = _k.pattern_transpose(n, n, sym.u_ptr, sym.u_idx)

    # initial guess: U = upper(A) (fill entries zero), L = strict lower of A
    # scaled by the initial diagonal
    zero = vals.dtype.type(0.0)
    u_old = np.where(a_of_u >= 0, vals[np.maximum(a_of_u, 0)], zero)
    diag = u_old[sym.u_ptr[:-1]]
    l_old = np.where(a_of_l >= 0, vals[np.maximum(a_of_l, 0)], zero)
    with np.errstate(divide="ignore", invalid="ignore"):
        l_old = l_old / diag[sym.l_idx]
    l_new = np.empty_like(l_old)
    u_new = np.empty_like(u_old)

    residuals = []
    try:
        for _ in range(factor_sweeps):
            _k.fastilu_sweep(sym.l_ptr, sym.l_idx, l_old, l_new,
                             sym.u_ptr, sym.u_idx, u_old, u_new,
                             uc_ptr, uc_rows, uc_src, a_of_l, a_of_u, vals)
            l_old, l_new = l_new, l_old
            u_old, u_new = u_new, u_old
            residuals.append(float(_k.fastilu_residual(
                sym.l_ptr, sym.l_idx, l_old, sym.u_ptr, sym.u_idx, u_old,
                uc_ptr, uc_rows, uc_src, l_of_a, u_of_a,
                p.row_ptr, p.col_idx, vals)))
    except ZeroDivisionError:
        l_old = np.array([np.nan], dtype=vals.dtype)
    if not (np.isfinite(l_old).all() and np.isfinite(u_old).all()):
        raise FloatingPointError(
            "fixed-point factorization produced nonfinite entries; use a "
            "more conservative initial guess (diagonal shift) or exact ILU")
    return LocalFactorization(sym, "fast_ilu", l_old, u_old,
                              sweep_residuals=residuals,
                              trisolve_iters=trisolve_iters)


# ---------------------------------------------------------------------------
# solve phase entry points
# ---------------------------------------------------------------------------

def trisolve_levelset(fac: LocalFactorization, b: np.ndarray) -> np.ndarray:
    """Forward then backward substitution on the level schedules. Rows inside
    one level are independent, so the result is bit-identical to sequential
    substitution."""
    if fac.method == "fast_ilu":
        raise ValueError("fast_ilu factors are solved with fast_trisolve")
    return fac.solve(b)


def fast_trisolve(fac: LocalFactorization, b: np.ndarray,
                  iters: int) -> np.ndarray:
    """Jacobi-Richardson triangular iteration, x(1) = D^-1 b and
    x(m+1) = D^-1 (b - (T - D) x(m)), applied to L then U. `iters` counts
    iterates, so iters=1 returns D^-1 b; any triangular system is solved
    exactly once iters reaches its dependency depth."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    s = fac.symbolic
    x = np.asarray(b)[s.ordering.perm].astype(fac.l_values.dtype)
    x = _k.jacobi_trisolve_lower_unit(s.l_ptr, s.l_idx, fac.l_values, x, iters)
    x = _k.jacobi_trisolve_upper(s.u_ptr, s.u_idx, fac.u_values, x, iters)
    out = np.empty_like(x)
    out[s.ordering.perm] = x
    return out


# ---------------------------------------------------------------------------
# configuration-driven dispatch (used by the preconditioner setup)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverSpec:
    method: str = "exact_lu"
    fill_level: int = 0
    factor_sweeps: int = 3
    trisolve_iters: int = 5
    diag_shift: float = 0.0

    def __post_init__(self):
        if self.method not in LOCAL_SOLVER_METHODS:
            raise ValueError(f"unknown local solver method {self.method!r}")


def build_symbolic(a: CsrMatrix, spec: SolverSpec,
                   ordering: Ordering | None = None) -> SymbolicFactorization:
    if spec.method == "exact_lu":
        return symbolic_lu(a, ordering)
    return symbolic_ilu_k(a, spec.fill_level, ordering)


def build_numeric(a: CsrMatrix, sym: SymbolicFactorization,
                  spec: SolverSpec) -> LocalFactorization:
    if spec.method == "exact_lu":
        return numeric_lu(a, sym)
    if spec.method == "ilu_k":
        return numeric_ilu(a, sym, spec.diag_shift)
    return fast_ilu_numeric(a, sym, spec.factor_sweeps, spec.trisolve_iters)
