"""Dense revised simplex for small standard-form linear programs.

    minimise    c @ x
    subject to  A @ x = b,  x >= 0

``A`` may be a dense array or a scipy sparse matrix; only column
extraction and ``A.T @ y`` are used.  The basis inverse is kept dense and
updated by elementary row operations, with periodic refactorisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    duals: np.ndarray
    status: str  # "optimal", "iteration_cap", "unbounded", "infeasible"
    iterations: int
    basis: np.ndarray


def _column(A, j):
    if sp.issparse(A):
        col = A[:, [j]]
        return col.toarray().ravel()
    return np.asarray(A[:, j], dtype=float)


def _basis_matrix(A, basis):
    if sp.issparse(A):
        return A[:, basis].toarray()
    return np.asarray(A[:, basis], dtype=float)


def _run(c, A, b, basis, max_iter, tol, refactor_every=64, bland_after=50):
    m = A.shape[0]
    basis = np.array(basis, dtype=int)
    Binv = np.linalg.inv(_basis_matrix(A, basis))
    xB = Binv @ b
    in_basis = np.zeros(A.shape[1], dtype=bool)
    in_basis[basis] = True
    stall = 0
    it = 0
    while it < max_iter:
        y = c[basis] @ Binv
        reduced = c - A.T @ y
        reduced[in_basis] = 0.0
        if stall >= bland_after:
            cand = np.flatnonzero(reduced < -tol)
            if cand.size == 0:
                return xB, Binv, basis, "optimal", it
            j = int(cand[0])
        else:
            j = int(np.argmin(reduced))
            if reduced[j] >= -tol:
                return xB, Binv, basis, "optimal", it
        d = Binv @ _column(A, j)
        pos = d > tol
        if not pos.any():
            return xB, Binv, basis, "unbounded", it
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(xB[pos], 0.0) / d[pos]
        tmin = ratios.min()
        ties = np.flatnonzero(ratios <= tmin + tol * max(1.0, tmin))
        r = int(ties[np.argmin(basis[ties])])
        t = ratios[r]
        stall = stall + 1 if t <= tol else 0
        xB -= t * d
        xB[r] = t
        in_basis[basis[r]] = False
        in_basis[j] = True
        basis[r] = j
        piv = Binv[r] / d[r]
        Binv -= np.outer(d, piv)
        Binv[r] = piv
        it += 1
        if it % refactor_every == 0:
            Binv = np.linalg.inv(_basis_matrix(A, basis))
            xB = Binv @ b
    return xB, Binv, basis, "iteration_cap", it


def solve(c, A, b, basis=None, max_iter=100_000, tol=1e-11) -> LPResult:
    """Solve a standard-form LP; ``basis`` optionally gives a feasible start."""
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    iters = 0
    if basis is None:
        sign = np.where(b < 0, -1.0, 1.0)
        As = (sp.diags(sign) @ A).tocsc() if sp.issparse(A) else sign[:, None] * A
        A1 = sp.hstack([As, sp.identity(m)], format="csc") if sp.issparse(A) else np.hstack([As, np.eye(m)])
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        xB, Binv, basis, status, iters = _run(c1, A1, sign * b, np.arange(n, n + m), max_iter, tol)
        if status == "iteration_cap":
            return LPResult(np.zeros(n), np.nan, np.zeros(m), status, iters, basis)
        if c1[basis] @ xB > 1e-9 * max(1.0, np.abs(b).sum()):
            return LPResult(np.zeros(n), np.nan, np.zeros(m), "infeasible", iters, basis)
        # pivot zero-level artificials out of the basis where possible
        for r in np.flatnonzero(basis >= n):
            row = np.asarray(As.T @ Binv[r]).ravel()
            row[basis[basis < n]] = 0.0
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if cand.size:
                basis[r] = cand[0]
                Binv = np.linalg.inv(_basis_matrix(A1, basis))
        if np.any(basis >= n):
            raise np.linalg.LinAlgError("redundant equality rows are not supported")
    xB, Binv, basis, status, more = _run(c, A, b, basis, max_iter - iters, tol)
    iters += more
    x = np.zeros(n)
    x[basis] = xB
    duals = c[basis] @ Binv
    return LPResult(x, float(c @ x), duals, status, iters, basis)
