"""Two-level additive overlapping Schwarz preconditioner.

The preconditioner applies

    z = Phi A0^-1 Phi^T r  +  sum_i R_i^T A_i^-1 R_i r

where R_i restricts to the i-th overlapping subdomain, A_i = R_i A R_i^T is
solved by the configured local method (exact LU, ILU(k), or the fixed-point
variant), and the optional coarse term uses the energy-minimizing basis from
coarse_space. Setup is split into a symbolic phase working only on the
sparsity pattern (orderings, fill patterns, level schedules, workspaces) and
a numeric phase that can be repeated for new values on the same pattern.

Single-precision mode converts the operator once, factors the subdomain
blocks in single, stores Phi and A0 in single, and runs the whole apply in
single on a rounded copy of the input, promoting the result back to double.
The coarse basis itself is still computed in double arithmetic (on the
rounded values) so the extension residual check keeps its meaning.

apply() is deterministic across thread counts: local solves may run on a
thread pool, but the overlapping contributions are accumulated in fixed
subdomain order afterwards.
"""

from __future__ import annotations

import hashlib
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coarse_space import (
    InteriorBlocks,
    coarse_matrix,
    harmonic_extension,
    interface_basis,
)
from .decomposition import Decomposition
from .local_solvers import (
    LocalFactorization,
    Ordering,
    SolverSpec,
    SymbolicFactorization,
    build_numeric,
    build_symbolic,
    make_ordering,
    numeric_lu,
    symbolic_lu,
)
from .sparse_core import CsrMatrix, convert_precision, extract_submatrix, spmv, transpose

PRECISIONS = ("double", "single")


@dataclass(frozen=True)
class SchwarzConfig:
    local: SolverSpec = SolverSpec()
    use_coarse: bool = True
    precision: str = "double"
    ordering: str = "nested_dissection"
    threads: int = 1

    def __post_init__(self):
        if not isinstance(self.local, SolverSpec):
            raise TypeError("local must be a SolverSpec")
        if self.precision not in PRECISIONS:
            raise ValueError(f"unknown precision {self.precision!r}")
        if self.ordering not in ("natural", "nested_dissection"):
            raise ValueError(f"unknown ordering kind {self.ordering!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")


def _pattern_fingerprint(a: CsrMatrix) -> str:
    h = hashlib.sha256()
    h.update(np.array([a.nrows, a.ncols], dtype=np.int64).tobytes())
    h.update(a.row_ptr.tobytes())
    h.update(a.col_idx.tobytes())
    return h.hexdigest()


@dataclass
class PreconditionerSkeleton:
    """Everything derivable from the pattern alone: overlap index maps,
    orderings, symbolic factorizations, and the interior splits used by the
    coarse basis. The coarse matrix pattern only exists after the numeric
    phase, so its factorization slot stays symbolic-free here."""

    config: SchwarzConfig
    decomposition: Decomposition
    n: int
    sets: list                     # per subdomain: sorted overlap dof ids
    local_symbolics: list
    interior_sets: list            # empty when one-level
    interior_symbolics: list
    pattern_fingerprint: str
    structure_hash: str


@dataclass
class CoarseSolver:
    phi: CsrMatrix
    phi_t: CsrMatrix
    a0: CsrMatrix
    a0_factorization: LocalFactorization
    column_map: list


class _ScratchPool:
    """Reusable per-apply gather buffers; grows only under concurrent use."""

    def __init__(self, factory):
        self._factory = factory
        self._lock = threading.Lock()
        self._items = []

    def acquire(self):
        with self._lock:
            if self._items:
                return self._items.pop()
        return self._factory()

    def release(self, item):
        with self._lock:
            self._items.append(item)


@dataclass
class TwoLevelPreconditioner:
    n: int
    overlap_maps: list
    local_factorizations: list
    coarse: CoarseSolver | None
    precision: str
    threads: int
    skeleton: PreconditionerSkeleton
    combine_mode: str = "additive"
    _pool: _ScratchPool = field(default=None, repr=False)
    _executor: ThreadPoolExecutor = field(default=None, repr=False)

    def apply(self, r: np.ndarray) -> np.ndarray:
        return apply(self, r)


def setup_symbolic(a: CsrMatrix, decomp: Decomposition,
                   config: SchwarzConfig) -> PreconditionerSkeleton:
    """Pattern-only phase: extract every overlapping block pattern, run the
    local symbolic factorizations per the configured method, and (two-level)
    the exact-LU symbolics of the subdomain interiors. Values of `a` are
    never read."""
    if a.nrows != a.ncols:
        raise ValueError("operator must be square")
    n = a.nrows
    part = decomp.partition
    if part.n != n:
        raise ValueError("decomposition does not match the operator size")
    structure = decomp.structure
    if config.use_coarse:
        if structure is None or structure.mode is None:
            raise ValueError("two-level setup needs interface components; "
                             "build the decomposition with a coarse mode or "
                             "set use_coarse=False")
    sets = [np.asarray(s, dtype=np.int64) for s in decomp.overlap.sets]
    if sum(s.size for s in sets) < n:
        raise ValueError("overlap sets do not cover the operator")

    local_symbolics = []
    for dofs in sets:
        block = extract_submatrix(a, dofs, dofs)
        ordering = make_ordering(block, config.ordering)
        local_symbolics.append(build_symbolic(block, config.local, ordering))

    interior_sets, interior_symbolics = [], []
    if config.use_coarse:
        on_interface = np.zeros(n, dtype=bool)
        on_interface[structure.interface] = True
        for s in range(part.n_parts):
            dofs = np.flatnonzero((part.owner == s) & ~on_interface)
            interior_sets.append(dofs)
            if dofs.size == 0:
                interior_symbolics.append(None)
                continue
            block = extract_submatrix(a, dofs, dofs)
            interior_symbolics.append(
                symbolic_lu(block, make_ordering(block, "nested_dissection")))

    h = hashlib.sha256()
    h.update(np.array([n, int(config.use_coarse)], dtype=np.int64).tobytes())
    for dofs, sym in zip(sets, local_symbolics):
        h.update(dofs.tobytes())
        h.update(bytes.fromhex(sym.structure_hash))
    for dofs, sym in zip(interior_sets, interior_symbolics):
        h.update(dofs.tobytes())
        if sym is not None:
            h.update(bytes.fromhex(sym.structure_hash))
    return PreconditionerSkeleton(
        config=config, decomposition=decomp, n=n, sets=sets,
        local_symbolics=local_symbolics, interior_sets=interior_sets,
        interior_symbolics=interior_symbolics,
        pattern_fingerprint=_pattern_fingerprint(a),
        structure_hash=h.hexdigest())


def _lift_to_double(a32: CsrMatrix) -> CsrMatrix:
    # float32 values are exactly representable in float64, so this changes
    # the arithmetic precision of downstream products, not the data
    return CsrMatrix(a32.nrows, a32.ncols, a32.row_ptr, a32.col_idx,
                     a32.values.astype(np.float64))


def setup_numeric(skeleton: PreconditionerSkeleton, a: CsrMatrix,
                  nullspace: np.ndarray | None = None) -> TwoLevelPreconditioner:
    """Numeric phase on a fixed pattern: factor every overlapping block,
    build the coarse basis and operator, and factor the coarse matrix.
    Repeatable for new values; the symbolic objects are shared, not
    recomputed."""
    if _pattern_fingerprint(a) != skeleton.pattern_fingerprint:
        raise ValueError("operator pattern does not match the symbolic "
                         "skeleton it was prepared for")
    config = skeleton.config
    single = config.precision == "single"
    if single:
        a32 = convert_precision(a, np.float32)
        local_src = a32
        coarse_src = _lift_to_double(a32)
    else:
        local_src = coarse_src = a

    local_factorizations = []
    for i, dofs in enumerate(skeleton.sets):
        block = extract_submatrix(local_src, dofs, dofs)
        try:
            local_factorizations.append(
                build_numeric(block, skeleton.local_symbolics[i], config.local))
        except (np.linalg.LinAlgError, FloatingPointError) as err:
            raise type(err)(
                f"local matrix of subdomain {i} failed to factor: {err}") from err

    coarse = None
    if config.use_coarse:
        if nullspace is None:
            raise ValueError("two-level numeric setup needs the operator "
                             "null space columns")
        structure = skeleton.decomposition.structure
        factors = []
        for s, dofs in enumerate(skeleton.interior_sets):
            if dofs.size == 0:
                factors.append(None)
                continue
            block = extract_submatrix(coarse_src, dofs, dofs)
            try:
                factors.append(numeric_lu(block, skeleton.interior_symbolics[s]))
            except np.linalg.LinAlgError as err:
                raise np.linalg.LinAlgError(
                    f"interior block of subdomain {s} is singular: {err}") from err
        basis = interface_basis(nullspace, structure)
        phi, column_map = harmonic_extension(
            coarse_src, structure, basis, InteriorBlocks(skeleton.interior_sets, factors))
        if phi.ncols == 0:
            raise ValueError("coarse space is empty; use use_coarse=False")
        a0 = coarse_matrix(coarse_src, phi)
        if single:
            phi = convert_precision(phi, np.float32)
            a0 = convert_precision(a0, np.float32)
        try:
            a0_fac = numeric_lu(a0, symbolic_lu(a0, make_ordering(a0, config.ordering)))
        except np.linalg.LinAlgError as err:
            raise np.linalg.LinAlgError(
                f"coarse matrix is singular: {err}") from err
        coarse = CoarseSolver(phi, transpose(phi), a0, a0_fac, column_map)

    dtype = np.float32 if single else np.float64
    sets = skeleton.sets

    def make_scratch():
        return [np.empty(dofs.size, dtype=dtype) for dofs in sets]

    executor = ThreadPoolExecutor(max_workers=config.threads) \
        if config.threads > 1 else None
    return TwoLevelPreconditioner(
        n=skeleton.n, overlap_maps=sets,
        local_factorizations=local_factorizations, coarse=coarse,
        precision=config.precision, threads=config.threads,
        skeleton=skeleton, _pool=_ScratchPool(make_scratch),
        _executor=executor)


def apply(m: TwoLevelPreconditioner, r: np.ndarray) -> np.ndarray:
    """z = Phi A0^-1 Phi^T r + sum_i R_i^T A_i^-1 R_i r.

    In single mode the input is rounded to single once, everything runs in
    single, and the result is promoted to double. Contributions are summed
    in fixed subdomain order whatever the thread count."""
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.shape != (m.n,):
        raise ValueError(f"residual has length {r.shape}, operator size {m.n}")
    single = m.precision == "single"
    rw = r.astype(np.float32) if single else r

    z_coarse = None
    if m.coarse is not None:
        u = spmv(m.coarse.phi_t, rw)
        v = m.coarse.a0_factorization.solve(u)
        z_coarse = spmv(m.coarse.phi, v)

    buffers = m._pool.acquire()
    try:
        for i, dofs in enumerate(m.overlap_maps):
            np.take(rw, dofs, out=buffers[i])
        if m._executor is not None:
            outs = list(m._executor.map(
                lambda i: m.local_factorizations[i].solve(buffers[i]),
                range(len(m.overlap_maps))))
        else:
            outs = [fac.solve(buf)
                    for fac, buf in zip(m.local_factorizations, buffers)]
    finally:
        m._pool.release(buffers)

    z = np.zeros(m.n, dtype=rw.dtype)
    for dofs, y in zip(m.overlap_maps, outs):
        z[dofs] += y
    if z_coarse is not None:
        z = z_coarse + z
    return z.astype(np.float64) if single else z
