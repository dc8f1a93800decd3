"""Model problem generators: 3-D Laplace (7-point FD) and linear elasticity
(trilinear hexahedra, 2x2x2 Gauss quadrature) on a box grid.

Dirichlet handling eliminates constrained dofs from the system entirely, so
the assembled operator is SPD and the reported grid is the free-node box:

* Laplace: the given grid IS the free-node set; the Dirichlet boundary lies
  implicitly one layer outside it (the classic tridiag(-1, 2, -1) convention
  in each axis).
* Elasticity: the x = 0 node plane is clamped; the full grid is assembled,
  the plane removed, and the instance reports the (nx-1, ny, nz) free box.

The Laplace stencil is scaled by the exact integer (n_axis - 1)^2 = 1/h^2 per
axis, which makes Neumann row sums exactly zero in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse_core import CsrMatrix, extract_submatrix


@dataclass(frozen=True)
class Grid3D:
    """Structured node box; x runs fastest in the node numbering."""

    nx: int
    ny: int
    nz: int
    dofs_per_node: int = 1

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if self.dofs_per_node < 1:
            raise ValueError("dofs_per_node must be positive")

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def n(self) -> int:
        return self.n_nodes * self.dofs_per_node

    @property
    def h(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def spacings(self):
        return (1.0 / (self.nx - 1), 1.0 / (self.ny - 1), 1.0 / (self.nz - 1))

    def node_index(self, i, j, k):
        return (k * self.ny + j) * self.nx + i

    def node_coords(self) -> np.ndarray:
        hx, hy, hz = self.spacings
        i, j, k = np.meshgrid(np.arange(self.nx), np.arange(self.ny),
                              np.arange(self.nz), indexing="ij")
        pts = np.stack([i * hx, j * hy, k * hz], axis=-1)
        # reorder so x runs fastest
        return pts.transpose(2, 1, 0, 3).reshape(-1, 3)


@dataclass
class ProblemInstance:
    a: CsrMatrix
    grid: Grid3D              # index box of the FREE nodes (partitioning)
    coords: np.ndarray        # (n_nodes, 3) coordinates of the free nodes
    nullspace: np.ndarray     # (n, n_n) normalized null space of the Neumann
    kind: str                 # operator (restriction-consistent for Dirichlet)
    boundary: str


def _axis_neighbor_pairs(grid: Grid3D):
    """(lo, hi) node-id arrays for every axis-aligned neighbor pair, per axis."""
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    ids = np.arange(grid.n_nodes, dtype=np.int64).reshape(nz, ny, nx)
    pairs = []
    pairs.append((ids[:, :, :-1].ravel(), ids[:, :, 1:].ravel()))   # x
    pairs.append((ids[:, :-1, :].ravel(), ids[:, 1:, :].ravel()))   # y
    pairs.append((ids[:-1, :, :].ravel(), ids[1:, :, :].ravel()))   # z
    return pairs


def assemble_laplace3d(grid: Grid3D, boundary: str = "dirichlet") -> ProblemInstance:
    """7-point finite-difference Laplacian on the unit cube.

    boundary="dirichlet": homogeneous Dirichlet one layer outside the grid
    (every diagonal is the full 2/h^2 sum over the axes, SPD).
    boundary="neumann": one-sided stencils; the diagonal counts only existing
    neighbors, so A @ 1 = 0 exactly and A is singular PSD.
    """
    if boundary not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown boundary kind {boundary!r}")
    if grid.dofs_per_node != 1:
        raise ValueError("laplace3d is scalar; grid must have 1 dof per node")
    n = grid.n_nodes
    scale = [float((grid.nx - 1) ** 2), float((grid.ny - 1) ** 2),
             float((grid.nz - 1) ** 2)]  # exact integers = 1/h^2 per axis

    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    if boundary == "dirichlet":
        diag[:] = 2.0 * (scale[0] + scale[1] + scale[2])
    for axis, (lo, hi) in enumerate(_axis_neighbor_pairs(grid)):
        s = scale[axis]
        rows.extend([lo, hi])
        cols.extend([hi, lo])
        vals.extend([np.full(lo.size, -s), np.full(lo.size, -s)])
        if boundary == "neumann":
            np.add.at(diag, lo, s)
            np.add.at(diag, hi, s)
    rows.append(np.arange(n, dtype=np.int64))
    cols.append(np.arange(n, dtype=np.int64))
    vals.append(diag)
    a = CsrMatrix.from_coo(n, n, np.concatenate(rows), np.concatenate(cols),
                           np.concatenate(vals))
    z = np.full((n, 1), 1.0 / np.sqrt(n))
    return ProblemInstance(a, grid, grid.node_coords(), z, "laplace", boundary)


# ---------------------------------------------------------------------------
# linear elasticity
# ---------------------------------------------------------------------------

# local corner order of the hexahedron in reference coordinates
_CORNERS = np.array([
    [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
    [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
], dtype=np.float64)


def isotropic_material(e_mod: float, nu: float) -> np.ndarray:
    """6x6 isotropic stiffness in Voigt order (xx, yy, zz, yz, xz, xy)."""
    if not 0.0 <= nu < 0.5:
        raise ValueError("Poisson ratio must lie in [0, 0.5)")
    lam = e_mod * nu / ((1 + nu) * (1 - 2 * nu))
    mu = e_mod / (2 * (1 + nu))
    d = np.zeros((6, 6))
    d[:3, :3] = lam
    d[np.arange(3), np.arange(3)] += 2 * mu
    d[np.arange(3, 6), np.arange(3, 6)] = mu
    return d


def hex_element_stiffness(hx, hy, hz, e_mod=1.0, nu=0.3) -> np.ndarray:
    """24x24 stiffness of one rectangular trilinear hexahedron.

    2x2x2 Gauss quadrature; the Jacobian is diagonal and constant, so the
    quadrature is exact for this element. Dof order: node-major, (ux, uy, uz)
    within a node.
    """
    d = isotropic_material(e_mod, nu)
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    jac = np.array([hx / 2, hy / 2, hz / 2])
    detj = jac.prod()
    ke = np.zeros((24, 24))
    for gx in gp:
        for gy in gp:
            for gz in gp:
                xi = np.array([gx, gy, gz])
                # dN_a/dxi_c, trilinear shape functions
                dn = np.empty((8, 3))
                for a in range(8):
                    s = _CORNERS[a]
                    dn[a, 0] = s[0] * (1 + s[1] * xi[1]) * (1 + s[2] * xi[2]) / 8
                    dn[a, 1] = (1 + s[0] * xi[0]) * s[1] * (1 + s[2] * xi[2]) / 8
                    dn[a, 2] = (1 + s[0] * xi[0]) * (1 + s[1] * xi[1]) * s[2] / 8
                dndx = dn / jac  # reference -> physical derivatives
                b = np.zeros((6, 24))
                for a in range(8):
                    bx, by, bz = dndx[a]
                    c = 3 * a
                    b[0, c] = bx
                    b[1, c + 1] = by
                    b[2, c + 2] = bz
                    b[3, c + 1] = bz
                    b[3, c + 2] = by
                    b[4, c] = bz
                    b[4, c + 2] = bx
                    b[5, c] = by
                    b[5, c + 1] = bx
                ke += b.T @ d @ b * detj
    return (ke + ke.T) / 2


def assemble_elasticity3d(grid: Grid3D, e_mod: float = 1.0, nu: float = 0.3,
                          boundary: str = "dirichlet") -> ProblemInstance:
    """Linear elasticity on the unit cube, one identical element stiffness
    scattered over all (nx-1)(ny-1)(nz-1) elements in fixed element order.

    boundary="dirichlet" clamps all three dofs on the x = 0 node plane and
    removes them from the system; boundary="neumann" keeps the full singular
    operator (6 rigid body modes).
    """
    if boundary not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown boundary kind {boundary!r}")
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    hx, hy, hz = grid.spacings
    full = Grid3D(nx, ny, nz, dofs_per_node=3)
    ke = hex_element_stiffness(hx, hy, hz, e_mod, nu)

    ex, ey, ez = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1),
                             np.arange(nz - 1), indexing="ij")
    ex, ey, ez = ex.ravel(), ey.ravel(), ez.ravel()
    base = (ez * ny + ey) * nx + ex
    offsets = np.array([full.node_index(int(c[0] > 0), int(c[1] > 0), int(c[2] > 0))
                        for c in _CORNERS], dtype=np.int64)
    enodes = base[:, None] + offsets[None, :]                  # (nelem, 8)
    edofs = (enodes[:, :, None] * 3 + np.arange(3)).reshape(-1, 24)
    rows = np.repeat(edofs, 24, axis=1).ravel()
    cols = np.tile(edofs, (1, 24)).ravel()
    vals = np.tile(ke.ravel(), edofs.shape[0])
    a_full = CsrMatrix.from_coo(full.n, full.n, rows, cols, vals)

    coords = grid.node_coords()
    if boundary == "dirichlet":
        free_nodes = np.flatnonzero(coords[:, 0] > 0.0)
        free_dofs = (free_nodes[:, None] * 3 + np.arange(3)).ravel()
        a = extract_submatrix(a_full, free_dofs, free_dofs)
        coords = coords[free_nodes]
        out_grid = Grid3D(nx - 1, ny, nz, dofs_per_node=3)
    else:
        a = a_full
        out_grid = full
    z = rigid_body_modes(coords)
    return ProblemInstance(a, out_grid, coords, z, "elasticity", boundary)


def rigid_body_modes(coords: np.ndarray) -> np.ndarray:
    """Six normalized columns: translations and linearized rotations."""
    n_nodes = coords.shape[0]
    x, y, zc = coords[:, 0], coords[:, 1], coords[:, 2]
    zero = np.zeros(n_nodes)
    one = np.ones(n_nodes)
    cols = [
        np.stack([one, zero, zero], axis=1),
        np.stack([zero, one, zero], axis=1),
        np.stack([zero, zero, one], axis=1),
        np.stack([-y, x, zero], axis=1),      # about z
        np.stack([zero, -zc, y], axis=1),     # about x
        np.stack([zc, zero, -x], axis=1),     # about y
    ]
    z = np.stack([c.ravel() for c in cols], axis=1)
    norms = np.linalg.norm(z, axis=0)
    # a rotation mode degenerates to zero when all nodes sit on its axis;
    # keep the zero column instead of dividing by zero
    norms[norms == 0.0] = 1.0
    return z / norms
