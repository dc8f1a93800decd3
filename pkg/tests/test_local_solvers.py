import numpy as np
import pytest

from schwarzdd.local_solvers import (
    LocalFactorization,
    Ordering,
    SolverSpec,
    build_numeric,
    build_symbolic,
    fast_ilu_numeric,
    fast_trisolve,
    make_ordering,
    numeric_ilu,
    numeric_lu,
    order_natural,
    order_nested_dissection,
    symbolic_ilu_k,
    symbolic_lu,
    trisolve_levelset,
)
from schwarzdd.sparse_core import CsrMatrix


# ---------------------------------------------------------------------------
# dense oracles (independent reimplementations, loop-based on purpose)
# ---------------------------------------------------------------------------

def dense_fill_lu(pattern):
    """Right-looking symbolic elimination on a boolean matrix; returns the
    strict-lower and upper (incl. diagonal) fill masks."""
    m = pattern.copy()
    n = m.shape[0]
    np.fill_diagonal(m, True)
    for k in range(n):
        rows = np.flatnonzero(m[k + 1:, k]) + k + 1
        cols = np.flatnonzero(m[k, k + 1:]) + k + 1
        if rows.size and cols.size:
            m[np.ix_(rows, cols)] = True
    return np.tril(m, -1), np.triu(m)


def dense_lu_nopivot(a):
    """Right-looking dense LU without pivoting."""
    w = np.array(a, dtype=np.float64)
    n = w.shape[0]
    for k in range(n):
        if w[k, k] == 0.0:
            raise ZeroDivisionError(f"zero pivot at {k}")
        w[k + 1:, k] /= w[k, k]
        w[k + 1:, k + 1:] -= np.outer(w[k + 1:, k], w[k, k + 1:])
    return np.tril(w, -1) + np.eye(n), np.triu(w)


def dense_iluk_masks(pattern, k):
    """Brute-force level-of-fill: original entries level 0, fill level
    min over paths of lev(i,l) + lev(l,j) + 1; keep levels <= k."""
    n = pattern.shape[0]
    big = 10 ** 6
    lev = np.where(pattern, 0, big)
    np.fill_diagonal(lev, 0)
    for i in range(n):
        for l in range(i):
            if lev[i, l] > k:
                continue
            for j in range(l + 1, n):
                cand = lev[i, l] + lev[l, j] + 1
                if cand < lev[i, j]:
                    lev[i, j] = cand
    keep = lev <= k
    return np.tril(keep, -1), np.triu(keep)


def dense_restricted_ilu(a, l_mask, u_mask):
    """IKJ elimination restricted to the factor masks (mirrors the sparse
    kernel's update order)."""
    n = a.shape[0]
    lw = np.eye(n)
    uw = np.zeros((n, n))
    for i in range(n):
        mask_i = l_mask[i] | u_mask[i]
        w = np.where(mask_i, a[i], 0.0)
        for kk in np.flatnonzero(l_mask[i]):
            l_ik = w[kk] / uw[kk, kk]
            w[kk] = l_ik
            upd = u_mask[kk] & mask_i
            upd[kk] = False
            w[upd] -= l_ik * uw[kk, upd]
        lw[i, l_mask[i]] = w[l_mask[i]]
        uw[i, u_mask[i]] = w[u_mask[i]]
    return lw, uw


def dense_fast_sweeps(a, l_mask, u_mask, sweeps):
    """Synchronous fixed-point sweeps on dense storage."""
    n = a.shape[0]
    diag = np.diag(a).copy()
    lw = np.where(l_mask, a, 0.0) / diag[None, :]
    uw = np.where(u_mask, a, 0.0)
    for _ in range(sweeps):
        ln = np.zeros_like(lw)
        un = np.zeros_like(uw)
        for i in range(n):
            for j in np.flatnonzero(l_mask[i]):
                s = lw[i, :j] @ uw[:j, j]
                ln[i, j] = (a[i, j] - s) / uw[j, j]
            for j in np.flatnonzero(u_mask[i]):
                s = lw[i, :i] @ uw[:i, j]
                un[i, j] = a[i, j] - s
        lw, uw = ln, un
    return lw + np.eye(n), uw


def dense_jacobi_trisolve(t, b, iters, unit_lower):
    d = np.ones_like(b) if unit_lower else np.diag(t).copy()
    x = b / d
    off = t - np.diag(np.diag(t)) if not unit_lower else t - np.eye(t.shape[0])
    for _ in range(iters - 1):
        x = (b - off @ x) / d
    return x


def tridiag(n):
    d = np.diag(np.full(n, 2.0))
    o = np.diag(np.full(n - 1, -1.0), 1)
    return d + o + o.T


def grid2d(nx, ny):
    """2D 5-point operator, Dirichlet, on an nx*ny grid."""
    n = nx * ny
    a = np.zeros((n, n))
    for j in range(ny):
        for i in range(nx):
            r = j * nx + i
            a[r, r] = 4.0
            if i > 0:
                a[r, r - 1] = -1.0
            if i < nx - 1:
                a[r, r + 1] = -1.0
            if j > 0:
                a[r, r - nx] = -1.0
            if j < ny - 1:
                a[r, r + nx] = -1.0
    return a


def random_symmetric_pattern(rng, n, density=0.15):
    m = rng.random((n, n)) < density
    m = m | m.T
    np.fill_diagonal(m, True)
    vals = rng.standard_normal((n, n)) * m
    vals = (vals + vals.T) / 2.0
    vals += np.diag(np.abs(vals).sum(axis=1) + 1.0)   # diagonally dominant
    return vals


def factor_masks(sym):
    n = sym.n
    lm = np.zeros((n, n), dtype=bool)
    um = np.zeros((n, n), dtype=bool)
    for i in range(n):
        lm[i, sym.l_idx[sym.l_ptr[i]:sym.l_ptr[i + 1]]] = True
        um[i, sym.u_idx[sym.u_ptr[i]:sym.u_ptr[i + 1]]] = True
    return lm, um


def dense_from(sym, fac):
    n = sym.n
    lw = np.eye(n, dtype=fac.l_values.dtype)
    uw = np.zeros((n, n), dtype=fac.u_values.dtype)
    for i in range(n):
        lw[i, sym.l_idx[sym.l_ptr[i]:sym.l_ptr[i + 1]]] = \
            fac.l_values[sym.l_ptr[i]:sym.l_ptr[i + 1]]
        uw[i, sym.u_idx[sym.u_ptr[i]:sym.u_ptr[i + 1]]] = \
            fac.u_values[sym.u_ptr[i]:sym.u_ptr[i + 1]]
    return lw, uw


# ---------------------------------------------------------------------------
# orderings
# ---------------------------------------------------------------------------

def test_natural_ordering():
    o = order_natural(5)
    assert o.kind == "natural"
    assert np.array_equal(o.perm, np.arange(5))


def test_ordering_inverse_validated():
    with pytest.raises(ValueError, match="not inverses"):
        Ordering("natural", np.array([1, 0, 2]), np.array([0, 1, 2]))


def test_nd_path_separator_last():
    a = CsrMatrix.from_dense(tridiag(7))
    o = order_nested_dissection(a, leaf_size=4)
    assert np.array_equal(o.perm, [0, 1, 2, 4, 5, 6, 3])
    assert o.perm[6] == 3


def test_nd_small_graph_stays_natural():
    a = CsrMatrix.from_dense(tridiag(7))
    o = order_nested_dissection(a)
    assert np.array_equal(o.perm, np.arange(7))


def test_nd_is_permutation_random():
    rng = np.random.default_rng(5)
    for _ in range(10):
        n = int(rng.integers(10, 120))
        a = CsrMatrix.from_dense(random_symmetric_pattern(rng, n))
        o = order_nested_dissection(a, leaf_size=8)
        assert np.array_equal(np.sort(o.perm), np.arange(n))
        assert np.array_equal(o.perm[o.inverse_perm], np.arange(n))


def test_nd_disconnected_graph():
    a = np.zeros((10, 10))
    a[:5, :5] = tridiag(5)
    a[5:, 5:] = tridiag(5)
    o = order_nested_dissection(CsrMatrix.from_dense(a), leaf_size=2)
    assert np.array_equal(np.sort(o.perm), np.arange(10))
    # components stay contiguous: first block's vertices first
    assert set(o.perm[:5].tolist()) == {0, 1, 2, 3, 4}


def test_nd_reduces_fill_on_grid():
    a = CsrMatrix.from_dense(grid2d(8, 8))
    nat = symbolic_lu(a, order_natural(64))
    nd = symbolic_lu(a, order_nested_dissection(a, leaf_size=8))
    assert nd.fill_nnz <= nat.fill_nnz


def test_make_ordering_dispatch():
    a = CsrMatrix.from_dense(tridiag(5))
    assert make_ordering(a, "natural").kind == "natural"
    assert make_ordering(a, "nested_dissection").kind == "nested_dissection"
    with pytest.raises(ValueError, match="unknown ordering"):
        make_ordering(a, "amd")


# ---------------------------------------------------------------------------
# symbolic phase
# ---------------------------------------------------------------------------

def test_symbolic_tridiag_zero_fill():
    a = CsrMatrix.from_dense(tridiag(6))
    sym = symbolic_lu(a)
    assert sym.l_idx.size == 5          # subdiagonal only
    assert sym.u_idx.size == 11         # diagonal + superdiagonal


def test_symbolic_arrow_matrix():
    n = 8
    arrow = np.eye(n)
    arrow[-1, :] = 1.0
    arrow[:, -1] = 1.0
    a = CsrMatrix.from_dense(arrow)
    nat = symbolic_lu(a)
    assert nat.l_idx.size == n - 1      # last row only: zero fill
    rev = np.arange(n)[::-1].copy()
    flipped = symbolic_lu(a, Ordering("natural", rev, rev.copy()))
    assert flipped.l_idx.size == n * (n - 1) // 2   # fully dense factors


def test_symbolic_matches_dense_oracle():
    rng = np.random.default_rng(17)
    for _ in range(30):
        n = int(rng.integers(5, 40))
        a = random_symmetric_pattern(rng, n)
        sym = symbolic_lu(CsrMatrix.from_dense(a))
        lm, um = factor_masks(sym)
        lo, uo = dense_fill_lu(a != 0)
        assert np.array_equal(lm, lo)
        assert np.array_equal(um, uo)


def test_iluk_pattern_matches_dense_oracle():
    rng = np.random.default_rng(23)
    for _ in range(30):
        n = int(rng.integers(5, 35))
        k = int(rng.integers(0, 4))
        a = random_symmetric_pattern(rng, n)
        sym = symbolic_ilu_k(CsrMatrix.from_dense(a), k)
        lm, um = factor_masks(sym)
        lo, uo = dense_iluk_masks(a != 0, k)
        assert np.array_equal(lm, lo)
        assert np.array_equal(um, uo)


def test_ilu0_pattern_is_a_pattern():
    a = grid2d(4, 4)
    sym = symbolic_ilu_k(CsrMatrix.from_dense(a), 0)
    lm, um = factor_masks(sym)
    assert np.array_equal(lm | um, a != 0)


def test_iluk_on_tridiag_never_fills():
    a = CsrMatrix.from_dense(tridiag(9))
    base = symbolic_ilu_k(a, 0)
    for k in (1, 2, 5):
        sym = symbolic_ilu_k(a, k)
        assert np.array_equal(sym.l_idx, base.l_idx)
        assert np.array_equal(sym.u_idx, base.u_idx)


def test_iluk_grid_k1_frozen():
    a = CsrMatrix.from_dense(grid2d(4, 4))
    sym = symbolic_ilu_k(a, 1)
    lm, um = factor_masks(sym)
    lo, uo = dense_iluk_masks(grid2d(4, 4) != 0, 1)
    assert np.array_equal(lm, lo)
    assert np.array_equal(um, uo)


def test_iluk_large_k_equals_exact():
    rng = np.random.default_rng(29)
    for _ in range(10):
        n = int(rng.integers(5, 50))
        a = CsrMatrix.from_dense(random_symmetric_pattern(rng, n))
        exact = symbolic_lu(a)
        ilu = symbolic_ilu_k(a, n)
        assert np.array_equal(exact.l_ptr, ilu.l_ptr)
        assert np.array_equal(exact.l_idx, ilu.l_idx)
        assert np.array_equal(exact.u_ptr, ilu.u_ptr)
        assert np.array_equal(exact.u_idx, ilu.u_idx)


def test_level_schedules_topologically_consistent():
    rng = np.random.default_rng(31)
    for _ in range(10):
        n = int(rng.integers(10, 60))
        a = CsrMatrix.from_dense(random_symmetric_pattern(rng, n))
        sym = symbolic_lu(a)
        pos_l = np.empty(n, dtype=int)
        pos_l[sym.l_level_rows] = np.arange(n)
        lev_of = np.searchsorted(sym.l_level_ptr, pos_l, side="right") - 1
        for i in range(n):
            for j in sym.l_idx[sym.l_ptr[i]:sym.l_ptr[i + 1]]:
                assert lev_of[j] < lev_of[i]
        pos_u = np.empty(n, dtype=int)
        pos_u[sym.u_level_rows] = np.arange(n)
        lev_u = np.searchsorted(sym.u_level_ptr, pos_u, side="right") - 1
        for i in range(n):
            for j in sym.u_idx[sym.u_ptr[i] + 1:sym.u_ptr[i + 1]]:
                assert lev_u[j] < lev_u[i]


# ---------------------------------------------------------------------------
# numeric phase, exact LU
# ---------------------------------------------------------------------------

def test_numeric_identity():
    a = CsrMatrix.identity(5)
    fac = numeric_lu(a, symbolic_lu(a))
    assert np.all(fac.u_values == 1.0)
    assert fac.l_values.size == 0


def test_numeric_tridiag_diagonal_recurrence():
    a = CsrMatrix.from_dense(tridiag(4))
    fac = numeric_lu(a, symbolic_lu(a))
    sym = fac.symbolic
    u_diag = fac.u_values[sym.u_ptr[:-1]]
    assert np.allclose(u_diag, [2.0, 1.5, 4.0 / 3.0, 1.25], rtol=1e-15)


def test_numeric_matches_dense_lu():
    rng = np.random.default_rng(37)
    for _ in range(25):
        n = int(rng.integers(5, 40))
        a = random_symmetric_pattern(rng, n)
        fac = numeric_lu(CsrMatrix.from_dense(a), symbolic_lu(CsrMatrix.from_dense(a)))
        lw, uw = dense_from(fac.symbolic, fac)
        lo, uo = dense_lu_nopivot(a)
        assert np.allclose(lw, lo, atol=1e-12 * np.abs(lo).max())
        assert np.allclose(uw, uo, atol=1e-12 * np.abs(uo).max())


def test_numeric_reconstructs_permuted_matrix():
    rng = np.random.default_rng(41)
    a = random_symmetric_pattern(rng, 30)
    am = CsrMatrix.from_dense(a)
    o = order_nested_dissection(am, leaf_size=6)
    fac = numeric_lu(am, symbolic_lu(am, o))
    lw, uw = dense_from(fac.symbolic, fac)
    pap = a[np.ix_(o.perm, o.perm)]
    anorm = np.abs(a).sum(axis=1).max()
    assert np.abs(lw @ uw - pap).max() <= 1e-10 * anorm


def test_numeric_tiny_pivot_names_row():
    a = CsrMatrix.from_dense(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(np.linalg.LinAlgError, match="row 1"):
        numeric_lu(a, symbolic_lu(a))


def test_numeric_tiny_pivot_names_original_row():
    # permuted so the failing eliminated position maps back through perm
    a = np.array([[1.0, 0.0, 1.0], [0.0, 2.0, 0.0], [1.0, 0.0, 1.0]])
    am = CsrMatrix.from_dense(a)
    rev = np.array([2, 1, 0])
    with pytest.raises(np.linalg.LinAlgError, match="row 0"):
        numeric_lu(am, symbolic_lu(am, Ordering("natural", rev, rev.copy())))


def test_three_phase_reuse_bitwise():
    rng = np.random.default_rng(43)
    a = random_symmetric_pattern(rng, 25)
    am = CsrMatrix.from_dense(a)
    sym = symbolic_lu(am)
    f1 = numeric_lu(am, sym)
    for _ in range(5):
        f2 = numeric_lu(am, sym)
        assert np.array_equal(f1.l_values, f2.l_values)
        assert np.array_equal(f1.u_values, f2.u_values)
    # same pattern, different values: symbolic is reusable and equal to a
    # from-scratch factorization bitwise
    bm = CsrMatrix.from_dense(2.0 * a)
    via_reuse = numeric_lu(bm, sym)
    fresh = numeric_lu(bm, symbolic_lu(bm))
    assert fresh.symbolic.structure_hash == sym.structure_hash
    assert np.array_equal(via_reuse.l_values, fresh.l_values)
    assert np.array_equal(via_reuse.u_values, fresh.u_values)


def test_structure_hash_distinguishes_patterns():
    a = CsrMatrix.from_dense(tridiag(6))
    b = CsrMatrix.from_dense(grid2d(3, 2))
    assert symbolic_lu(a).structure_hash != symbolic_lu(b).structure_hash
    assert symbolic_lu(a).structure_hash != symbolic_ilu_k(a, 0).structure_hash


# ---------------------------------------------------------------------------
# numeric phase, ILU(k)
# ---------------------------------------------------------------------------

def test_ilu_tridiag_equals_exact():
    a = CsrMatrix.from_dense(tridiag(6))
    ex = numeric_lu(a, symbolic_lu(a))
    il = numeric_ilu(a, symbolic_ilu_k(a, 0))
    assert np.allclose(ex.l_values, il.l_values, rtol=1e-15)
    assert np.allclose(ex.u_values, il.u_values, rtol=1e-15)


def test_ilu0_exact_on_own_pattern():
    a = grid2d(3, 3)
    am = CsrMatrix.from_dense(a)
    fac = numeric_ilu(am, symbolic_ilu_k(am, 0))
    lw, uw = dense_from(fac.symbolic, fac)
    resid = lw @ uw - a
    anorm = np.abs(a).sum(axis=1).max()
    assert np.abs(resid[a != 0]).max() <= 1e-13 * anorm
    assert np.abs(resid).max() > 1e-3   # but not exact off-pattern


def test_ilu_values_match_dense_oracle():
    rng = np.random.default_rng(47)
    for _ in range(25):
        n = int(rng.integers(5, 30))
        k = int(rng.integers(0, 3))
        a = random_symmetric_pattern(rng, n)
        am = CsrMatrix.from_dense(a)
        fac = numeric_ilu(am, symbolic_ilu_k(am, k))
        lw, uw = dense_from(fac.symbolic, fac)
        lm, um = factor_masks(fac.symbolic)
        lo, uo = dense_restricted_ilu(a, lm, um)
        assert np.allclose(lw, lo, atol=1e-12 * max(1.0, np.abs(uo).max()))
        assert np.allclose(uw, uo, atol=1e-12 * max(1.0, np.abs(uo).max()))


def test_ilu_residual_shrinks_with_level():
    a = grid2d(5, 5)
    am = CsrMatrix.from_dense(a)
    norms = []
    for k in range(4):
        fac = numeric_ilu(am, symbolic_ilu_k(am, k))
        lw, uw = dense_from(fac.symbolic, fac)
        norms.append(np.linalg.norm(lw @ uw - a))
    assert norms[0] > norms[1] > norms[2] > norms[3]
    ex = numeric_lu(am, symbolic_lu(am))
    lw, uw = dense_from(ex.symbolic, ex)
    assert np.linalg.norm(lw @ uw - a) <= 1e-12 * np.linalg.norm(a)


def test_ilu_diag_shift_rescues_zero_pivot():
    a = CsrMatrix.from_dense(np.array([[1.0, 1.0], [1.0, 1.0]]))
    sym = symbolic_ilu_k(a, 0)
    with pytest.raises(np.linalg.LinAlgError):
        numeric_ilu(a, sym)
    fac = numeric_ilu(a, sym, diag_shift=0.5)
    assert np.isfinite(fac.u_values).all()


# ---------------------------------------------------------------------------
# solve phase
# ---------------------------------------------------------------------------

def test_trisolve_identity_factors():
    a = CsrMatrix.identity(6)
    fac = numeric_lu(a, symbolic_lu(a))
    b = np.arange(6.0)
    assert np.array_equal(trisolve_levelset(fac, b), b)


def test_trisolve_manufactured_solution():
    a = CsrMatrix.from_dense(tridiag(4))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    b = a @ x
    fac = numeric_lu(a, symbolic_lu(a))
    assert np.allclose(trisolve_levelset(fac, b), x, atol=1e-12)


def test_trisolve_lower_vs_dense_substitution():
    rng = np.random.default_rng(53)
    for _ in range(20):
        n = int(rng.integers(4, 30))
        lw = np.tril(rng.standard_normal((n, n)), -1) * (rng.random((n, n)) < 0.4)
        a = lw + np.eye(n)
        fac = numeric_lu(CsrMatrix.from_dense(a), symbolic_lu(CsrMatrix.from_dense(a)))
        b = rng.standard_normal(n)
        x = trisolve_levelset(fac, b)
        want = np.linalg.solve(a, b)
        assert np.allclose(x, want, atol=1e-13 * max(1.0, np.abs(want).max()))


def test_trisolve_with_ordering_round_trips():
    rng = np.random.default_rng(59)
    a = random_symmetric_pattern(rng, 40)
    am = CsrMatrix.from_dense(a)
    for o in (order_natural(40), order_nested_dissection(am, leaf_size=8)):
        fac = numeric_lu(am, symbolic_lu(am, o))
        x = rng.standard_normal(40)
        b = a @ x
        assert np.allclose(fac.solve(b), x, atol=1e-10 * np.abs(x).max())


def test_solve_many_matches_single():
    rng = np.random.default_rng(61)
    a = random_symmetric_pattern(rng, 25)
    am = CsrMatrix.from_dense(a)
    fac = numeric_lu(am, symbolic_lu(am))
    b = rng.standard_normal((25, 7))
    xm = fac.solve_many(b)
    for c in range(7):
        assert np.array_equal(xm[:, c], fac.solve(b[:, c]))


def test_levelset_equals_sequential_bitwise():
    # sequential substitution reimplemented directly on the factor arrays
    rng = np.random.default_rng(67)
    a = random_symmetric_pattern(rng, 35)
    am = CsrMatrix.from_dense(a)
    fac = numeric_lu(am, symbolic_lu(am))
    s = fac.symbolic
    b = rng.standard_normal(35)
    x = b.copy()
    for i in range(35):
        for p in range(s.l_ptr[i], s.l_ptr[i + 1]):
            x[i] -= fac.l_values[p] * x[s.l_idx[p]]
    for i in range(34, -1, -1):
        for p in range(s.u_ptr[i] + 1, s.u_ptr[i + 1]):
            x[i] -= fac.u_values[p] * x[s.u_idx[p]]
        x[i] /= fac.u_values[s.u_ptr[i]]
    assert np.array_equal(trisolve_levelset(fac, b), x)


# ---------------------------------------------------------------------------
# fixed-point factorization and trisolve
# ---------------------------------------------------------------------------

def test_fast_ilu_diagonal_matrix_exact():
    a = CsrMatrix.from_dense(np.diag([2.0, 3.0, 4.0]))
    fac = fast_ilu_numeric(a, symbolic_ilu_k(a, 0), factor_sweeps=1)
    assert np.array_equal(fac.u_values, [2.0, 3.0, 4.0])
    assert fac.l_values.size == 0
    assert fac.sweep_residuals[-1] == 0.0


def test_fast_ilu_matches_dense_sweeps():
    rng = np.random.default_rng(71)
    for _ in range(15):
        n = int(rng.integers(4, 25))
        sweeps = int(rng.integers(1, 5))
        a = random_symmetric_pattern(rng, n)
        am = CsrMatrix.from_dense(a)
        fac = fast_ilu_numeric(am, symbolic_ilu_k(am, 0), factor_sweeps=sweeps)
        lw, uw = dense_from(fac.symbolic, fac)
        lm, um = factor_masks(fac.symbolic)
        lo, uo = dense_fast_sweeps(a, lm, um, sweeps)
        scale = max(1.0, np.abs(uo).max())
        assert np.allclose(lw, lo, atol=1e-12 * scale)
        assert np.allclose(uw, uo, atol=1e-12 * scale)


def test_fast_ilu_residual_strictly_decreasing():
    a = CsrMatrix.from_dense(tridiag(8))
    fac = fast_ilu_numeric(a, symbolic_ilu_k(a, 0), factor_sweeps=5)
    r = fac.sweep_residuals
    assert len(r) == 5
    assert all(r[m + 1] < r[m] for m in range(4))


def test_fast_ilu_converges_to_ilu_fixed_point():
    rng = np.random.default_rng(73)
    a = random_symmetric_pattern(rng, 20)
    am = CsrMatrix.from_dense(a)
    sym = symbolic_ilu_k(am, 0)
    fast = fast_ilu_numeric(am, sym, factor_sweeps=20)
    direct = numeric_ilu(am, sym)
    assert np.abs(fast.l_values - direct.l_values).max() <= 1e-8
    assert np.abs(fast.u_values - direct.u_values).max() <= 1e-8


def test_fast_ilu_sweep_count_validated():
    a = CsrMatrix.from_dense(tridiag(4))
    with pytest.raises(ValueError, match="at least 1"):
        fast_ilu_numeric(a, symbolic_ilu_k(a, 0), factor_sweeps=0)


def test_fast_ilu_nonfinite_raises():
    a = CsrMatrix.from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(FloatingPointError, match="exact ILU"):
        fast_ilu_numeric(a, symbolic_ilu_k(a, 0), factor_sweeps=2)


def test_fast_trisolve_diagonal_exact_first_iterate():
    a = CsrMatrix.from_dense(np.diag([2.0, 4.0]))
    fac = fast_ilu_numeric(a, symbolic_ilu_k(a, 0), factor_sweeps=1)
    x = fast_trisolve(fac, np.array([2.0, 8.0]), iters=1)
    assert np.array_equal(x, [1.0, 2.0])


def test_fast_trisolve_bidiagonal_nilpotency():
    # unit lower bidiagonal with subdiagonal -1: iterates hit the exact
    # solution once the count reaches the dependency depth
    a = np.eye(3) + np.diag([-1.0, -1.0], -1)
    am = CsrMatrix.from_dense(a)
    fac = fast_ilu_numeric(am, symbolic_ilu_k(am, 0), factor_sweeps=1)
    b = np.array([1.0, 0.0, 0.0])
    assert np.array_equal(fast_trisolve(fac, b, iters=1), [1.0, 0.0, 0.0])
    assert np.array_equal(fast_trisolve(fac, b, iters=2), [1.0, 1.0, 0.0])
    assert np.array_equal(fast_trisolve(fac, b, iters=3), [1.0, 1.0, 1.0])


def test_fast_trisolve_matches_dense_jacobi():
    rng = np.random.default_rng(79)
    for _ in range(15):
        n = int(rng.integers(4, 20))
        a = random_symmetric_pattern(rng, n)
        am = CsrMatrix.from_dense(a)
        fac = fast_ilu_numeric(am, symbolic_ilu_k(am, 0), factor_sweeps=3)
        lw, uw = dense_from(fac.symbolic, fac)
        b = rng.standard_normal(n)
        iters = int(rng.integers(1, 6))
        y = dense_jacobi_trisolve(lw, b, iters, unit_lower=True)
        want = dense_jacobi_trisolve(uw, y, iters, unit_lower=False)
        got = fast_trisolve(fac, b, iters)
        assert np.allclose(got, want, atol=1e-12 * max(1.0, np.abs(want).max()))


def test_fast_trisolve_error_decreases_on_grid():
    a = grid2d(5, 5)
    am = CsrMatrix.from_dense(a)
    sym = symbolic_ilu_k(am, 0)
    direct = numeric_ilu(am, sym)
    rng = np.random.default_rng(83)
    for _ in range(10):
        b = rng.standard_normal(25)
        exact = trisolve_levelset(direct, b)
        errs = [np.linalg.norm(fast_trisolve(direct, b, m) - exact)
                for m in range(1, 6)]
        assert all(errs[m + 1] < errs[m] for m in range(4))


def test_fast_trisolve_finite_termination():
    rng = np.random.default_rng(89)
    a = random_symmetric_pattern(rng, 30)
    am = CsrMatrix.from_dense(a)
    direct = numeric_ilu(am, symbolic_ilu_k(am, 1))
    b = rng.standard_normal(30)
    exact = trisolve_levelset(direct, b)
    approx = fast_trisolve(direct, b, iters=30)
    assert np.linalg.norm(approx - exact) <= 1e-12 * np.linalg.norm(exact)


def test_trisolve_levelset_rejects_fast_factors():
    a = CsrMatrix.from_dense(tridiag(4))
    fac = fast_ilu_numeric(a, symbolic_ilu_k(a, 0))
    with pytest.raises(ValueError, match="fast_trisolve"):
        trisolve_levelset(fac, np.zeros(4))


# ---------------------------------------------------------------------------
# dispatch helpers
# ---------------------------------------------------------------------------

def test_solver_spec_dispatch():
    rng = np.random.default_rng(97)
    a = random_symmetric_pattern(rng, 20)
    am = CsrMatrix.from_dense(a)
    x = rng.standard_normal(20)
    b = a @ x
    for method in ("exact_lu", "ilu_k", "fast_ilu"):
        spec = SolverSpec(method=method, fill_level=1)
        fac = build_numeric(am, build_symbolic(am, spec), spec)
        assert fac.method == method
        got = fac.solve(b)
        tol = 1e-9 if method == "exact_lu" else 0.7
        assert np.linalg.norm(got - x) <= tol * np.linalg.norm(x)


def test_solver_spec_validation():
    with pytest.raises(ValueError, match="unknown local solver"):
        SolverSpec(method="cholesky")
