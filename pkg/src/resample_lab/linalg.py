"""Conjugate-gradient solvers on matrix-free operators."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import CGBreakdown

Matvec = Callable[[np.ndarray], np.ndarray]


class SolveResult(NamedTuple):
    x: np.ndarray
    residual_norm: float
    n_iter: int


def conjugate_gradient(matvec: Matvec, b: np.ndarray, iters: int = 100, tol: float = 1e-10,
                       x0: np.ndarray | None = None) -> SolveResult:
    """Solve ``M x = b`` for symmetric positive-definite ``M``.

    Stops when ``||b - M x|| <= tol`` or after ``iters`` iterations. Raises
    :class:`CGBreakdown` on non-positive curvature.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - matvec(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = float(r @ r)
    trace = [np.sqrt(rr)]
    if trace[0] <= tol:
        return SolveResult(x, trace[0], 0)
    for k in range(1, iters + 1):
        Mp = matvec(p)
        curv = float(p @ Mp)
        if not curv > 0:
            raise CGBreakdown(f"non-positive curvature {curv:.3g} at iteration {k}", trace)
        a = rr / curv
        x += a * p
        r -= a * Mp
        rr_new = float(r @ r)
        trace.append(np.sqrt(rr_new))
        if trace[-1] <= tol:
            return SolveResult(x, trace[-1], k)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return SolveResult(x, trace[-1], iters)


def cgls_solve(matvec: Matvec, rmatvec: Matvec, b: np.ndarray, iters: int = 100,
               tol: float = 1e-10) -> SolveResult:
    """Least-squares solve of ``min ||M x - b||`` by CGLS.

    Equivalent to CG on ``M^T M x = M^T b`` without forming the product.
    ``tol`` applies to the normal-equation residual ``||M^T (b - M x)||``;
    the returned ``residual_norm`` is that quantity.
    """
    b = np.asarray(b, dtype=np.float64)
    r = b.copy()
    s = rmatvec(r)
    x = np.zeros_like(s)
    p = s.copy()
    gamma = float(s @ s)
    trace = [np.sqrt(gamma)]
    if trace[0] <= tol:
        return SolveResult(x, trace[0], 0)
    for k in range(1, iters + 1):
        q = matvec(p)
        curv = float(q @ q)
        if not curv > 0:
            raise CGBreakdown(f"zero curvature at iteration {k}", trace)
        a = gamma / curv
        x += a * p
        r -= a * q
        s = rmatvec(r)
        gamma_new = float(s @ s)
        trace.append(np.sqrt(gamma_new))
        if trace[-1] <= tol:
            return SolveResult(x, trace[-1], k)
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return SolveResult(x, trace[-1], iters)
