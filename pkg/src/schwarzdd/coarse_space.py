"""Coarse basis construction and the Galerkin coarse operator.

Pipeline: restrict the operator's null space to each interface component and
scale by the partition-of-unity weights (interface_basis), factor each
subdomain's interior block (factor_interiors), extend the interface values
energy-minimally into the interiors by solving A_II phi_I = -A_IG phi_G
block-by-block (harmonic_extension), then form A0 = Phi^T A Phi
(coarse_matrix).

Phi is stored as CSR with one column per kept (component, null-space column)
pair; interface rows carry the scaled restricted null space bitwise, interior
rows the extension values with exact zeros pruned. Null-space columns that
vanish on a component (norm <= 1e-12 of the source column) are dropped, and
so are columns whose restriction is linearly dependent on earlier kept
columns of the same component (e.g. a rotation restricted to two collinear
nodes is a combination of translations there). Dropping both keeps Phi full
rank and hence A0 nonsingular; kept columns are never modified, so the
interface rows of Phi stay exact restrictions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .decomposition import InterfaceStructure, Partition
from .local_solvers import (
    LocalFactorization,
    make_ordering,
    numeric_lu,
    symbolic_lu,
)
from .sparse_core import CsrMatrix, extract_submatrix, spgemm, transpose


@dataclass
class InterfaceBasis:
    blocks: list          # per component: (component dofs, kept cols) array
    kept: list            # per component: kept null-space column ids
    n_nullspace: int
    coeffs: list = None   # per component: (kept, n_nullspace) expansion of
                          # every null-space column in the kept ones


@dataclass
class InteriorBlocks:
    sets: list            # per subdomain: sorted interior dof ids
    factors: list         # per subdomain: exact LU (None for empty interiors)


@dataclass
class CoarseBasis:
    phi: CsrMatrix        # n x n_coarse
    a0: CsrMatrix         # n_coarse x n_coarse
    column_map: list      # per Phi column: (component id, null-space column)

    @property
    def n_coarse(self) -> int:
        return self.phi.ncols


def interface_basis(nullspace: np.ndarray,
                    structure: InterfaceStructure) -> InterfaceBasis:
    """Per-component interface values: weights times the null-space rows at
    the component's dofs. Columns numerically zero on a component are
    dropped, as are columns linearly dependent on earlier kept columns of
    the same component; a component losing all columns contributes nothing
    (warning). coeffs records, per component, the least-squares expansion of
    every original null-space column in the kept ones (exact for dependent
    drops), so the reproduction property survives the dropping."""
    z = np.asarray(nullspace, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError("nullspace must be a 2-D column block")
    col_scale = np.linalg.norm(z, axis=0)
    blocks, kept, coeffs = [], [], []
    for t, comp in enumerate(structure.components):
        vals = comp.weights[:, None] * z[comp.dofs, :]
        norms = np.linalg.norm(vals, axis=0)
        keep = []
        # orthonormal scratch basis, only for the keep/drop decision; kept
        # columns themselves are copied from vals unmodified
        q = np.zeros((vals.shape[0], 0))
        for j in range(z.shape[1]):
            if norms[j] <= 1e-12 * col_scale[j]:
                continue
            r = vals[:, j] - q @ (q.T @ vals[:, j])
            r -= q @ (q.T @ r)
            rnorm = np.linalg.norm(r)
            if rnorm > 1e-8 * norms[j]:
                q = np.hstack([q, (r / rnorm)[:, None]])
                keep.append(j)
        if not keep:
            warnings.warn(f"interface component {t} has no nonzero "
                          "null-space restriction; it contributes no coarse "
                          "functions")
            coeffs.append(np.zeros((0, z.shape[1])))
        else:
            coeffs.append(np.linalg.lstsq(vals[:, keep], vals, rcond=None)[0])
        blocks.append(vals[:, keep])
        kept.append(keep)
    return InterfaceBasis(blocks, kept, z.shape[1], coeffs)


def factor_interiors(a: CsrMatrix, part: Partition,
                     structure: InterfaceStructure,
                     ordering_kind: str = "nested_dissection") -> InteriorBlocks:
    """Exact LU of each A_{I_i I_i}, I_i = dofs owned by subdomain i that are
    not on the interface."""
    on_interface = np.zeros(structure.n, dtype=bool)
    on_interface[structure.interface] = True
    sets, factors = [], []
    for s in range(part.n_parts):
        dofs = np.flatnonzero((part.owner == s) & ~on_interface)
        sets.append(dofs)
        if dofs.size == 0:
            factors.append(None)
            continue
        block = extract_submatrix(a, dofs, dofs)
        try:
            factors.append(numeric_lu(
                block, symbolic_lu(block, make_ordering(block, ordering_kind))))
        except np.linalg.LinAlgError as err:
            raise np.linalg.LinAlgError(
                f"interior block of subdomain {s} is singular: {err}") from err
    return InteriorBlocks(sets, factors)


def harmonic_extension(a: CsrMatrix, structure: InterfaceStructure,
                       basis: InterfaceBasis,
                       interiors: InteriorBlocks):
    """Assemble Phi: interface rows from the scaled restricted null space
    (copied, no arithmetic), interior rows from the energy-minimizing
    extension solved per subdomain. Returns (phi, column_map)."""
    n = structure.n
    gamma = structure.interface
    col_ids, column_map = [], []
    for t, comp in enumerate(structure.components):
        start = len(column_map)
        column_map.extend((t, j) for j in basis.kept[t])
        col_ids.append(np.arange(start, len(column_map)))
    n_cols = len(column_map)

    # dense interface block, n_Gamma x n_cols
    phi_gamma = np.zeros((gamma.size, n_cols))
    rows_list, cols_list, vals_list = [], [], []
    for t, comp in enumerate(structure.components):
        if col_ids[t].size == 0:
            continue
        pos = np.searchsorted(gamma, comp.dofs)
        phi_gamma[pos[:, None], col_ids[t][None, :]] += basis.blocks[t]
        rr, cc = np.meshgrid(comp.dofs, col_ids[t], indexing="ij")
        rows_list.append(rr.ravel())
        cols_list.append(cc.ravel())
        vals_list.append(basis.blocks[t].ravel())

    for s, dofs in enumerate(interiors.sets):
        if dofs.size == 0 or n_cols == 0:
            continue
        coupling = extract_submatrix(a, dofs, gamma)
        rhs = -(coupling @ phi_gamma)
        sol = interiors.factors[s].solve_many(rhs)
        rr, cc = np.nonzero(sol)
        if rr.size:
            rows_list.append(dofs[rr])
            cols_list.append(cc.astype(np.int64))
            vals_list.append(sol[rr, cc])

    if rows_list:
        phi = CsrMatrix.from_coo(n, n_cols,
                                 np.concatenate(rows_list),
                                 np.concatenate(cols_list),
                                 np.concatenate(vals_list))
    else:
        phi = CsrMatrix.from_coo(n, n_cols, [], [], np.zeros(0))

    _check_extension_residual(a, structure, phi, phi_gamma)
    return phi, column_map


def _check_extension_residual(a, structure, phi, phi_gamma):
    # interior rows of A @ Phi are exactly A_II phi_I + A_IG phi_G
    if phi.ncols == 0:
        return
    aphi = spgemm(a, phi)
    rows = np.repeat(np.arange(aphi.nrows), np.diff(aphi.row_ptr))
    interior_mask = np.ones(structure.n, dtype=bool)
    interior_mask[structure.interface] = False
    sel = interior_mask[rows]
    resid = np.zeros(phi.ncols)
    np.maximum.at(resid, aphi.col_idx[sel], np.abs(aphi.values[sel]))
    row_sums = np.zeros(a.nrows)
    np.add.at(row_sums, np.repeat(np.arange(a.nrows), np.diff(a.row_ptr)),
              np.abs(a.values))
    anorm = row_sums.max() if a.nrows else 0.0
    gnorm = np.abs(phi_gamma).max(axis=0)
    bad = np.flatnonzero(resid > 1e-10 * anorm * np.maximum(gnorm, 1e-300))
    if bad.size:
        raise ArithmeticError(
            f"energy-minimizing extension failed the residual check for "
            f"column {int(bad[0])} ({resid[bad[0]]:.3e})")


def coarse_matrix(a: CsrMatrix, phi: CsrMatrix) -> CsrMatrix:
    """Galerkin product Phi^T A Phi via two sparse products."""
    return spgemm(transpose(phi), spgemm(a, phi))


def reproduction_coefficients(column_map, n_nullspace: int,
                              coeffs=None) -> np.ndarray:
    """Coefficient block c with Phi @ c[:, j] reproducing null-space column j
    on operators whose null space is discrete-harmonic (Neumann). The default
    selector form is exact when no component dropped a dependent column; pass
    InterfaceBasis.coeffs to fold dependent drops back in."""
    c = np.zeros((len(column_map), n_nullspace))
    if coeffs is None:
        for i, (_, j) in enumerate(column_map):
            c[i, j] = 1.0
        return c
    row = 0
    for block in coeffs:
        c[row:row + block.shape[0], :] = block
        row += block.shape[0]
    if row != len(column_map):
        raise ValueError("coefficient blocks do not match the column map")
    return c


def build_coarse_basis(a: CsrMatrix, part: Partition,
                       structure: InterfaceStructure,
                       nullspace: np.ndarray,
                       ordering_kind: str = "nested_dissection") -> CoarseBasis:
    basis = interface_basis(nullspace, structure)
    interiors = factor_interiors(a, part, structure, ordering_kind)
    phi, column_map = harmonic_extension(a, structure, basis, interiors)
    return CoarseBasis(phi, coarse_matrix(a, phi), column_map)
