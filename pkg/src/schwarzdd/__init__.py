"""Two-level overlapping Schwarz preconditioners on CSR matrices.

Modules
-------
sparse_core      CSR type, kernels, MatrixMarket I/O
model_problems   3-D Laplace (FD) and linear elasticity (hex FEM) generators
decomposition    box partitions, overlap growth, interface classification
local_solvers    orderings, exact/incomplete LU, triangular solves
coarse_space     energy-minimizing coarse basis and coarse operator
schwarz          the preconditioner itself (symbolic/numeric/apply phases)
krylov           restarted right-preconditioned GMRES
bench            configs, runs, sweeps, reports, command line
"""

from .sparse_core import CsrMatrix

__all__ = ["CsrMatrix"]
__version__ = "0.1.0"
