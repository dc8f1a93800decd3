"""Right-preconditioned restarted GMRES, classic and single-reduce variants.

Both variants build the Krylov space of the preconditioned operator
B v = A(M(v)) and store, next to each orthonormal basis vector v_j, the
preconditioner image that produced it, so the solution update
x = x0 + sum_j y_j * zm_j never applies M again. That keeps the update
consistent even when M is only approximately linear (the single-precision
preconditioner rounds its input).

classic: Arnoldi with modified Gram-Schmidt (or CGS2), Givens least squares,
one orthogonalization reduction per basis vector per step.

single_reduce: the one-synchronization reformulation. Each loop pass fuses
every inner product it needs into one batched reduction: the second-pass
(reorthogonalization) coefficients of the previous candidate, its squared
norm, and the first-pass projections of the speculative next candidate.
Normalization is delayed one pass, so the residual estimate for iteration m
appears one pass later than in the classic variant, with identical operator
work per cycle. Algebraically both variants coincide; in floating point they
agree to roughly the orthogonalization error.

Reduction accounting: `iteration_reductions` counts orthogonalization and
norm reductions tied to basis construction (the single-reduce variant spends
exactly one per iteration), `residual_reductions` counts residual norms
(one per cycle start, one per true-residual confirmation), and
`reduction_count` is their sum. The estimated residual must pass a true
‖b - A x‖ evaluation before the solver reports convergence.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .sparse_core import CsrMatrix

VARIANTS = ("classic", "single_reduce")
ORTHOGONALIZATIONS = ("mgs", "cgs2")

BREAKDOWN_REL = 1e-14


@dataclass(frozen=True)
class KrylovConfig:
    restart: int = 30
    rel_tol: float = 1e-7
    max_iters: int = 500
    variant: str = "classic"
    orthogonalization: str = "mgs"

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be at least 1")
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie strictly between 0 and 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.orthogonalization not in ORTHOGONALIZATIONS:
            raise ValueError(
                f"unknown orthogonalization {self.orthogonalization!r}")


@dataclass
class Timings:
    symbolic: float = 0.0
    numeric: float = 0.0
    solve: float = 0.0


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residual_history: np.ndarray
    timings: Timings
    reduction_count: int
    iteration_reductions: int
    residual_reductions: int
    restarts: int                  # cycles started, first included
    true_residuals: list           # (iteration, relative true residual)


def _operator(obj, n: int):
    if obj is None:
        return lambda v: v
    if isinstance(obj, CsrMatrix):
        if obj.nrows != n or obj.ncols != n:
            raise ValueError("operator dimensions do not match the vector")
        return lambda v: obj @ v
    if hasattr(obj, "apply") and callable(obj.apply):
        return obj.apply
    if callable(obj):
        return obj
    raise TypeError("operator must be a CsrMatrix, expose .apply, or be "
                    "callable")


class _Counters:
    __slots__ = ("iteration", "residual")

    def __init__(self):
        self.iteration = 0
        self.residual = 0


def _rotation(a: float, b: float):
    r = math.hypot(a, b)
    if r == 0.0:
        return 1.0, 0.0
    return a / r, b / r


def _process_column(h, cs, sn, g, j):
    """Apply rotations 0..j-1 to column j of h, create rotation j, update
    the rotated rhs g. Returns the new residual estimate |g[j+1]|."""
    for i in range(j):
        t = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
        h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
        h[i, j] = t
    cs[j], sn[j] = _rotation(h[j, j], h[j + 1, j])
    h[j, j] = cs[j] * h[j, j] + sn[j] * h[j + 1, j]
    h[j + 1, j] = 0.0
    g[j + 1] = -sn[j] * g[j]
    g[j] = cs[j] * g[j]
    return abs(g[j + 1])


def _solve_y(h, g, m):
    y = np.zeros(m)
    for i in range(m - 1, -1, -1):
        s = g[i] - h[i, i + 1:m] @ y[i + 1:m]
        y[i] = s / h[i, i]
    return y


def gmres(a, m, b: np.ndarray, cfg: KrylovConfig = KrylovConfig(),
          x0: np.ndarray | None = None):
    """Solve A x = b with right preconditioner M. Returns (x, SolveReport).

    Convergence means the true relative residual ||b - A x|| / ||b - A x0||
    dropped to cfg.rel_tol, confirmed by an explicit evaluation, not just by
    the Givens recurrence estimate."""
    b = np.ascontiguousarray(b, dtype=np.float64)
    n = b.shape[0]
    a_op = _operator(a, n)
    m_op = _operator(m, n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError("x0 length does not match b")
    t0 = time.perf_counter()
    if cfg.variant == "classic":
        out = _gmres_classic(a_op, m_op, b, x, cfg)
    else:
        out = _gmres_single_reduce(a_op, m_op, b, x, cfg)
    out[1].timings.solve = time.perf_counter() - t0
    return out


def _report(it, converged, history, counters, restarts, true_res):
    return SolveReport(
        iterations=it, converged=converged,
        residual_history=np.asarray(history), timings=Timings(),
        reduction_count=counters.iteration + counters.residual,
        iteration_reductions=counters.iteration,
        residual_reductions=counters.residual,
        restarts=restarts, true_residuals=true_res)


def _true_residual(a_op, b, x_cand, counters):
    counters.residual += 1
    return float(np.linalg.norm(b - a_op(x_cand)))


def _gmres_classic(a_op, m_op, b, x, cfg):
    n = b.shape[0]
    restart = cfg.restart
    v = np.zeros((restart + 1, n))
    zm = np.zeros((restart, n))
    h = np.zeros((restart + 1, restart))
    g = np.zeros(restart + 1)
    cs = np.zeros(restart)
    sn = np.zeros(restart)
    counters = _Counters()
    history = [1.0]
    true_res = []
    it = 0
    restarts = 0
    denom = None
    bnorm = None

    while True:
        r0 = b - a_op(x)
        beta = float(np.linalg.norm(r0))
        counters.residual += 1
        restarts += 1
        if denom is None:
            denom = beta
            bnorm = _rhs_norm(b, x, beta, counters)
            if beta <= BREAKDOWN_REL * bnorm:
                # starting point already solves the system to machine level
                return x, _report(0, True, history, counters, restarts,
                                  true_res)
        else:
            true_res.append((it, beta / denom))
        if beta / denom <= cfg.rel_tol:
            # the cycle-start residual is already the true residual
            return x, _report(it, True, history, counters, restarts, true_res)
        v[0] = r0 / beta
        g[:] = 0.0
        g[0] = beta

        for j in range(restart):
            zm[j] = m_op(v[j])
            w = a_op(zm[j])
            if cfg.orthogonalization == "mgs":
                for i in range(j + 1):
                    hij = float(v[i] @ w)
                    counters.iteration += 1
                    w -= hij * v[i]
                    h[i, j] = hij
            else:
                c1 = v[:j + 1] @ w
                counters.iteration += 1
                w -= c1 @ v[:j + 1]
                c2 = v[:j + 1] @ w
                counters.iteration += 1
                w -= c2 @ v[:j + 1]
                h[:j + 1, j] = c1 + c2
            nrm = float(np.linalg.norm(w))
            counters.iteration += 1
            h[j + 1, j] = nrm
            it += 1
            est = _process_column(h, cs, sn, g, j)
            history.append(est / denom)
            breakdown = nrm <= BREAKDOWN_REL * bnorm
            if breakdown or est / denom <= cfg.rel_tol or it >= cfg.max_iters:
                y = _solve_y(h, g, j + 1)
                x_cand = x + y @ zm[:j + 1]
                tr = _true_residual(a_op, b, x_cand, counters)
                true_res.append((it, tr / denom))
                if tr / denom <= cfg.rel_tol:
                    return x_cand, _report(it, True, history, counters,
                                           restarts, true_res)
                if breakdown or it >= cfg.max_iters:
                    return x_cand, _report(it, False, history, counters,
                                           restarts, true_res)
                # estimate drifted below the true residual: keep iterating
            if j + 1 < restart:
                v[j + 1] = w / nrm

        y = _solve_y(h, g, restart)
        x = x + y @ zm


def _gmres_single_reduce(a_op, m_op, b, x, cfg):
    n = b.shape[0]
    restart = cfg.restart
    v = np.zeros((restart, n))
    zm = np.zeros((restart, n))
    h = np.zeros((restart + 1, restart))
    g = np.zeros(restart + 1)
    cs = np.zeros(restart)
    sn = np.zeros(restart)
    counters = _Counters()
    history = [1.0]
    true_res = []
    it = 0
    restarts = 0
    denom = None
    bnorm = None

    while True:
        r0 = b - a_op(x)
        restarts += 1
        v_cur = r0
        m_cur = m_op(v_cur)
        z_cur = a_op(m_cur)
        g[:] = 0.0

        for j in range(restart + 1):
            last = j == restart
            # one fused reduction: second-pass coefficients and norm of the
            # current candidate, plus (except on the wrap-up pass) the
            # first-pass projections of the speculative next candidate
            if last:
                block = np.concatenate([v[:j], [v_cur]]) @ v_cur
                a_coef = block[:j]
                b2 = float(block[j])
            else:
                block = np.concatenate([v[:j], [v_cur]]) @ \
                    np.stack([v_cur, z_cur], axis=1)
                a_coef = block[:j, 0]
                b2 = float(block[j, 0])
                p = block[:j, 1]
                q = float(block[j, 1])
            if j == 0:
                counters.residual += 1      # this block is the cycle norm
            else:
                counters.iteration += 1
            delta2 = b2 - float(a_coef @ a_coef)
            delta = math.sqrt(delta2) if delta2 > 0.0 else 0.0

            if j == 0:
                if denom is None:
                    denom = delta
                    bnorm = _rhs_norm(b, x, delta, counters)
                    if delta <= BREAKDOWN_REL * bnorm:
                        # starting point already solves the system
                        return x, _report(0, True, history, counters,
                                          restarts, true_res)
                else:
                    true_res.append((it, delta / denom))
                if delta / denom <= cfg.rel_tol:
                    return x, _report(it, True, history, counters, restarts,
                                      true_res)
                g[0] = delta
            else:
                # finalize column j-1: delayed reorthogonalization plus its
                # subdiagonal norm
                h[:j, j - 1] += a_coef
                h[j, j - 1] = delta
                it += 1
                est = _process_column(h, cs, sn, g, j - 1)
                history.append(est / denom)
                breakdown = delta <= BREAKDOWN_REL * bnorm
                if (breakdown or est / denom <= cfg.rel_tol
                        or it >= cfg.max_iters):
                    y = _solve_y(h, g, j)
                    x_cand = x + y @ zm[:j]
                    tr = _true_residual(a_op, b, x_cand, counters)
                    true_res.append((it, tr / denom))
                    if tr / denom <= cfg.rel_tol:
                        return x_cand, _report(it, True, history, counters,
                                               restarts, true_res)
                    if breakdown or it >= cfg.max_iters:
                        return x_cand, _report(it, False, history, counters,
                                               restarts, true_res)
            if last:
                break

            v[j] = (v_cur - a_coef @ v[:j]) / delta
            zm[j] = (m_cur - a_coef @ zm[:j]) / delta
            corr = (q - float(a_coef @ p)) / (delta * delta)
            h[:j, j] = p / delta
            h[j, j] = corr
            w = z_cur / delta - (p / delta) @ v[:j] - corr * v[j]
            v_cur = w
            if j + 1 <= restart - 1:
                # speculative next candidate feeds the next fused block;
                # the wrap-up pass only reorthogonalizes, so it needs no
                # operator applications
                m_cur = m_op(w)
                z_cur = a_op(m_cur)

        y = _solve_y(h, g, restart)
        x = x + y @ zm[:restart]


def _rhs_norm(b, x, beta: float, counters) -> float:
    """Scale for the breakdown test. Reuses the initial residual norm when
    x0 is zero, otherwise spends one extra norm reduction on ||b||."""
    if not np.any(x):
        return beta
    counters.residual += 1
    return float(np.linalg.norm(b))
