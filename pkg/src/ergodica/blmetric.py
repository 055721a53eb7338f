"""Exact bounded-Lipschitz (Fortet-Mourier) distance between particle clouds.

For two discrete measures with merged atoms ``x_i`` and signed masses
``c_i = p_i - q_i`` the distance is the value of

    max  sum_i c_i f_i
    s.t. |f_i| <= 1,  f_i - f_k <= ||x_i - x_k||.

On the line the Lipschitz constraints between sorted neighbours imply all
the others, and the resulting chain program is solved exactly by dynamic
programming over concave piecewise-linear value functions
(:func:`chain_bl`).  In higher dimension the LP dual, a min-cost flow, is
solved with :mod:`ergodica.simplex`.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import simplex
from .errors import TooManyAtoms

OPTIMAL = "Optimal"
ITERATION_CAP = "IterationCap"
LOWER_BOUND = "LowerBound"

LP_CAP = 4000
PAIR_CAP = 300
KNN = 16
FEAS_TOL = 1e-9


@dataclass
class BLDistanceResult:
    value: float
    witness: np.ndarray
    atoms: np.ndarray
    masses: np.ndarray
    solver_status: str
    method: str
    upper: Optional[float] = None
    iterations: int = 0
    max_violation: float = 0.0
    extra: dict = field(default_factory=dict)


def merge_signed(mu, nu):
    """Union of atoms with signed masses ``mu - nu``; zero-mass atoms dropped."""
    x = np.concatenate([mu.atoms, nu.atoms], axis=0)
    n_mu = mu.atoms.shape[0]
    if x.shape[1] == 1:
        order = np.argsort(x[:, 0], kind="stable")
        xs = x[order, 0]
        start = np.concatenate([[True], xs[1:] != xs[:-1]])
        ids = np.empty(x.shape[0], dtype=np.intp)
        ids[order] = np.cumsum(start) - 1
        atoms = xs[start][:, None]
    else:
        atoms, inv = np.unique(x, axis=0, return_inverse=True)
        ids = inv.ravel()
    # each side is summed on its own so that equal measures cancel exactly
    m = atoms.shape[0]
    c = (np.bincount(ids[:n_mu], weights=mu.weights, minlength=m)
         - np.bincount(ids[n_mu:], weights=nu.weights, minlength=m))
    keep = c != 0.0
    return atoms[keep], c[keep]


# ---------------------------------------------------------------- 1-D chain

def chain_bl(x, c):
    """Exact optimum of the chain program for sorted 1-D atoms.

    Returns ``(value, f)``.  ``V_i(t)``, the best partial objective with
    ``f_i = t``, is concave and piecewise linear on [-1, 1]; it is stored as
    slope breakpoints left (``L``) and right (``R``) of its maximiser.  The
    window step ``max_{|u-t|<=g} V(u)`` shifts the two sides apart by ``g``;
    adding ``c_i t`` walks the maximiser across breakpoints.
    """
    x = np.asarray(x, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    if n == 0:
        return 0.0, np.zeros(0)
    gaps = np.diff(x)
    L: list = []  # entries [-raw, weight]; position = raw + offL
    R: list = []  # entries [raw, weight];  position = raw + offR
    offL = offR = 0.0
    M = 0.0
    lo = np.empty(n)
    hi = np.empty(n)
    for i in range(n):
        if i:
            offL -= gaps[i - 1]
            offR += gaps[i - 1]
        while L and -L[0][0] + offL < -1.0:
            heapq.heappop(L)
        while R and R[0][0] + offR > 1.0:
            heapq.heappop(R)
        ci = c[i]
        if ci > 0:
            pos = R[0][0] + offR if R else 1.0
            val = M + ci * pos
            rem = ci
            while rem > 0:
                if R and R[0][0] + offR > 1.0:
                    R.clear()
                if not R:
                    val += rem * (1.0 - pos)
                    pos = 1.0
                    heapq.heappush(L, [-(1.0 - offL), rem])
                    break
                xr = R[0][0] + offR
                w = R[0][1]
                val += rem * (xr - pos)
                pos = xr
                if w <= rem:
                    heapq.heappop(R)
                    heapq.heappush(L, [-(xr - offL), w])
                    rem -= w
                else:
                    R[0][1] = w - rem
                    heapq.heappush(L, [-(xr - offL), rem])
                    rem = 0.0
            M = val
        elif ci < 0:
            pos = -L[0][0] + offL if L else -1.0
            val = M + ci * pos
            rem = -ci
            while rem > 0:
                if L and -L[0][0] + offL < -1.0:
                    L.clear()
                if not L:
                    val += rem * (pos + 1.0)
                    pos = -1.0
                    heapq.heappush(R, [-1.0 - offR, rem])
                    break
                xl = -L[0][0] + offL
                w = L[0][1]
                val += rem * (pos - xl)
                pos = xl
                if w <= rem:
                    heapq.heappop(L)
                    heapq.heappush(R, [xl - offR, w])
                    rem -= w
                else:
                    L[0][1] = w - rem
                    heapq.heappush(R, [xl - offR, rem])
                    rem = 0.0
            M = val
        lo[i] = max(-L[0][0] + offL, -1.0) if L else -1.0
        hi[i] = min(R[0][0] + offR, 1.0) if R else 1.0
    f = np.empty(n)
    f[-1] = lo[-1]
    for i in range(n - 2, -1, -1):
        t = min(max(f[i + 1], lo[i]), hi[i])
        f[i] = min(max(t, f[i + 1] - gaps[i]), f[i + 1] + gaps[i])
    return float(M), np.clip(f, -1.0, 1.0)


# ---------------------------------------------------------------- flow LP

def adjacent_pairs(n):
    i = np.arange(n - 1)
    return np.stack([i, i + 1], axis=1)


def all_pairs(n):
    i, k = np.triu_indices(n, 1)
    return np.stack([i, k], axis=1)


def knn_pairs(atoms, k):
    from scipy.spatial import cKDTree

    k = min(k, atoms.shape[0] - 1)
    _, nbr = cKDTree(atoms).query(atoms, k + 1)
    i = np.repeat(np.arange(atoms.shape[0]), k)
    j = nbr[:, 1:].ravel()
    pairs = np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)
    return np.unique(pairs, axis=0)


def flow_lp(atoms, c, pairs, max_iter=200_000):
    """Solve the BL dual as a min-cost flow; returns ``(value, f, status, iters)``.

    Columns are the flows along each pair in both directions (cost = distance)
    and one unit-cost in/out column per atom for the ``|f| <= 1`` bounds.
    The simplex multipliers of the node-balance rows are the optimal ``f``.
    """
    n = atoms.shape[0]
    if n == 0:
        return 0.0, np.zeros(0), OPTIMAL, 0
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    dist = np.linalg.norm(atoms[pairs[:, 0]] - atoms[pairs[:, 1]], axis=1)
    p = pairs.shape[0]
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    rows = np.concatenate([src, dst, np.arange(n), np.arange(n)])
    cols = np.concatenate([np.arange(2 * p), np.arange(2 * p), 2 * p + np.arange(n), 2 * p + n + np.arange(n)])
    vals = np.concatenate([np.ones(2 * p), -np.ones(2 * p), np.ones(n), -np.ones(n)])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n, 2 * p + 2 * n))
    cost = np.concatenate([dist, dist, np.ones(2 * n)])
    basis = np.where(c >= 0, 2 * p + np.arange(n), 2 * p + n + np.arange(n))
    res = simplex.solve(cost, A, c, basis=basis, max_iter=max_iter)
    status = OPTIMAL if res.status == "optimal" else ITERATION_CAP
    return res.value, res.duals, status, res.iterations


def lipschitz_repair(atoms, f, chunk=2048):
    """Largest feasible minorant: ``min_k (f_k + ||x - x_k||)`` clipped to [-1, 1]."""
    out = np.empty_like(f)
    for s in range(0, atoms.shape[0], chunk):
        d = np.linalg.norm(atoms[s:s + chunk, None, :] - atoms[None, :, :], axis=2)
        out[s:s + chunk] = np.min(f[None, :] + d, axis=1)
    return np.clip(out, -1.0, 1.0)


def max_violation(atoms, f, chunk=2048):
    """Largest breach of the bound or Lipschitz constraints over all pairs
    (sorted neighbours suffice on the line)."""
    if f.size == 0:
        return 0.0
    worst = max(0.0, float(np.max(np.abs(f))) - 1.0)
    if atoms.shape[1] == 1:
        order = np.argsort(atoms[:, 0])
        gap = np.diff(atoms[order, 0])
        jump = np.abs(np.diff(f[order]))
        return max(worst, float(np.max(jump - gap, initial=0.0)))
    for s in range(0, atoms.shape[0], chunk):
        d = np.linalg.norm(atoms[s:s + chunk, None, :] - atoms[None, :, :], axis=2)
        diff = np.abs(f[s:s + chunk, None] - f[None, :]) - d
        worst = max(worst, float(diff.max()))
    return worst


def bl_distance(mu, nu, method="auto", lp_cap=LP_CAP, pair_cap=PAIR_CAP, knn=KNN) -> BLDistanceResult:
    """Bounded-Lipschitz distance between two :class:`EmpiricalMeasure` objects.

    ``method``:
      * ``"auto"`` -- ``"chain"`` in one dimension, otherwise ``"full-lp"``
        up to ``pair_cap`` atoms and ``"knn-lp"`` above it;
      * ``"chain"`` -- exact 1-D dynamic program (no size cap);
      * ``"adjacent-lp"`` -- 1-D flow LP on sorted-neighbour constraints;
      * ``"full-lp"`` -- flow LP on all pairs;
      * ``"knn-lp"`` -- flow LP on k-nearest-neighbour pairs, followed by a
        Lipschitz repair of the witness.  The reported value is the repaired
        (feasible) objective, a lower bound; the LP value is kept as ``upper``.
    """
    if mu.dim != nu.dim:
        raise ValueError("measures live in different dimensions")
    atoms, c = merge_signed(mu, nu)
    n = atoms.shape[0]
    dim = mu.dim
    if method == "auto":
        method = "chain" if dim == 1 else ("full-lp" if n <= pair_cap else "knn-lp")
    if method == "chain":
        if dim != 1:
            raise ValueError("the chain solver is one-dimensional")
        value, f = chain_bl(atoms[:, 0], c)
        viol = max_violation(atoms, f)
        return BLDistanceResult(max(value, 0.0), f, atoms, c, OPTIMAL, "chain", max_violation=viol)
    if n > lp_cap:
        raise TooManyAtoms(f"{n} merged atoms exceed the LP cap of {lp_cap}")
    if method == "adjacent-lp":
        if dim != 1:
            raise ValueError("adjacency reduction is exact only in one dimension")
        pairs = adjacent_pairs(n)
    elif method == "full-lp":
        pairs = all_pairs(n)
    elif method == "knn-lp":
        pairs = knn_pairs(atoms, knn)
    else:
        raise ValueError(f"unknown method {method!r}")
    value, f, status, iters = flow_lp(atoms, c, pairs)
    upper = None
    if method == "knn-lp" or status != OPTIMAL:
        upper = value
        f = lipschitz_repair(atoms, f)
        value = float(c @ f)
        if status == OPTIMAL:
            status = LOWER_BOUND
    viol = max_violation(atoms, f)
    if viol > FEAS_TOL:
        f = lipschitz_repair(atoms, f)
        value = float(c @ f)
        viol = max_violation(atoms, f)
    return BLDistanceResult(max(value, 0.0), f, atoms, c, status, method, upper=upper,
                            iterations=iters, max_violation=viol)


def dump_lp(fh, atoms, masses, pairs) -> None:
    """Plain-text LP instance for cross-checking with external solvers."""
    atoms = np.asarray(atoms, dtype=float)
    fh.write(f"atoms {atoms.shape[0]} {atoms.shape[1]}\n")
    for row in atoms:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    fh.write(f"weights {len(masses)}\n")
    for m in masses:
        fh.write(f"{float(m)!r}\n")
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    fh.write(f"constraints {pairs.shape[0]}\n")
    for i, k in pairs:
        fh.write(f"{i} {k} {float(np.linalg.norm(atoms[i] - atoms[k]))!r}\n")
