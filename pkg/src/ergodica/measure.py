"""Particle measures, push-forward under the Markov adjoint, invariant-law
estimation, geometric-rate fitting and the approximation error bound."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .blmetric import bl_distance
from .dynsys import TransitionMap, as_state, simulate_path
from .errors import BadParameter, NoConvergence, NonFiniteState, RateNotGeometric
from .kernels import ShockKernel
from .parallel import parallel_map
from .rng import as_generator, as_stream


class EmpiricalMeasure:
    """Weighted particle cloud; ``atoms`` has shape (n, d)."""

    def __init__(self, atoms, weights=None, check=True):
        atoms = np.asarray(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        n = atoms.shape[0]
        if n < 1:
            raise BadParameter("a measure needs at least one atom")
        if weights is None:
            weights = np.full(n, 1.0 / n)
        weights = np.asarray(weights, dtype=float).ravel()
        if check:
            if weights.shape != (n,):
                raise BadParameter("atoms and weights differ in length")
            if np.any(weights < 0):
                raise BadParameter("weights must be nonnegative")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise BadParameter(f"weights sum to {weights.sum()!r}, not 1")
            if not np.all(np.isfinite(atoms)):
                raise NonFiniteState("measure has non-finite atoms")
        self.atoms = atoms
        self.weights = weights

    @classmethod
    def point_mass(cls, x):
        return cls(np.atleast_2d(np.asarray(x, dtype=float)))

    @property
    def dim(self):
        return self.atoms.shape[1]

    def __len__(self):
        return self.atoms.shape[0]

    def expect(self, f: Callable) -> float:
        return float(self.weights @ np.asarray(f(self.atoms), dtype=float).ravel())

    def expect_with_se(self, f: Callable) -> tuple[float, float]:
        """Integral and its standard error, treating atoms as independent draws."""
        v = np.asarray(f(self.atoms), dtype=float).ravel()
        m = float(self.weights @ v)
        se = math.sqrt(float(self.weights ** 2 @ (v - m) ** 2))
        return m, se

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def var(self) -> np.ndarray:
        m = self.mean()
        return self.weights @ (self.atoms - m) ** 2

    def subsample(self, m: int, rng) -> "EmpiricalMeasure":
        """Equal-weight cloud of ``m`` atoms by systematic resampling."""
        idx = systematic_resample(self.weights, m, as_generator(rng).random())
        return EmpiricalMeasure(self.atoms[idx])

    def __repr__(self):
        return f"EmpiricalMeasure(n={len(self)}, dim={self.dim})"


def systematic_resample(weights, n: int, u: float) -> np.ndarray:
    """Indices from one uniform ``u`` in [0, 1): ``searchsorted(cdf, (k + u) / n)``."""
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    pts = (np.arange(n) + u) / n
    return np.minimum(np.searchsorted(cdf, pts, side="right"), len(weights) - 1)


# ---------------------------------------------------------------- push-forward

def pushforward(map: TransitionMap, kernel: ShockKernel, mu: EmpiricalMeasure, draws_per_atom: int,
                stream, resample: bool = False) -> EmpiricalMeasure:
    """One step of the adjoint: atom ``i`` spawns ``draws_per_atom`` successors.

    With ``resample`` the result is brought back to ``len(mu)`` equal-weight
    atoms by systematic resampling.
    """
    if draws_per_atom < 1:
        raise BadParameter("draws_per_atom must be >= 1")
    rng = as_generator(stream)
    n, k = len(mu), draws_per_atom
    eps = kernel.sample(rng, n * k)
    src = np.repeat(mu.atoms, k, axis=0)
    with np.errstate(all="ignore"):
        out = map(src, eps)
    bad = ~np.all(np.isfinite(out), axis=1)
    if bad.any():
        i = int(np.argmax(bad)) // k
        raise NonFiniteState(f"non-finite image of atom {i}", index=i)
    w = np.repeat(mu.weights / k, k)
    w /= w.sum()
    res = EmpiricalMeasure(out, w, check=False)
    if resample:
        idx = systematic_resample(w, n, rng.random())
        res = EmpiricalMeasure(out[idx], check=False)
    return res


# ---------------------------------------------------------------- invariant law

def _halves_gap(prev: EmpiricalMeasure, cur: EmpiricalMeasure, m: int) -> tuple[float, float]:
    """(gap between successive clouds, gap between two disjoint halves of ``cur``).

    Both compare equal-size disjoint subsamples, so they share the same
    particle-noise floor.
    """
    n = len(cur)
    h = min(m, n // 2)
    a = EmpiricalMeasure(cur.atoms[:h], check=False)
    b = EmpiricalMeasure(cur.atoms[n - h:], check=False)
    c = EmpiricalMeasure(prev.atoms[n - h:], check=False)
    return bl_distance(a, c).value, bl_distance(a, b).value


def estimate_invariant(map: TransitionMap, kernel: ShockKernel, s0, burn_in: int, n_particles: int,
                       thinning: int = 1, stream=0, mode: str = "path", tol: Optional[float] = 1e-3,
                       max_iter: int = 10_000, check_every: int = 10, check_size: int = 2000
                       ) -> EmpiricalMeasure:
    """Particle approximation of the invariant law.

    ``mode="path"``: one long path from ``s0``; after ``burn_in`` steps every
    ``thinning``-th state is kept.

    ``mode="cloud"``: ``n_particles`` copies of ``s0`` are pushed forward
    ``burn_in`` times; then, if ``tol`` is not ``None``, iteration continues
    until the distance between successive clouds is within ``tol`` of the
    distance between two halves of one cloud (the particle-noise floor),
    checked every ``check_every`` steps.  Step ``k`` draws from substream
    ``("iter", k)``.
    """
    if burn_in < 0:
        raise BadParameter("burn_in must be >= 0")
    if n_particles < 100:
        raise BadParameter("n_particles must be >= 100")
    if thinning < 1:
        raise BadParameter("thinning must be >= 1")
    s0 = as_state(s0, map.dim)
    stream = as_stream(stream)
    if mode == "path":
        path = simulate_path(map, kernel, s0, burn_in + n_particles * thinning, stream.substream("path"))
        return EmpiricalMeasure(path[burn_in + thinning::thinning][:n_particles])
    if mode != "cloud":
        raise BadParameter(f"unknown invariant-estimation mode {mode!r}")
    cloud = EmpiricalMeasure(np.repeat(s0[None, :], n_particles, axis=0))
    for k in range(burn_in):
        cloud = pushforward(map, kernel, cloud, 1, stream.substream("iter", k))
    if tol is None:
        return cloud
    if tol <= 0:
        raise BadParameter("tol must be > 0")
    k = burn_in
    while k < max_iter:
        prev = cloud
        cloud = pushforward(map, kernel, cloud, 1, stream.substream("iter", k))
        k += 1
        if (k - burn_in) % check_every == 0 or k == burn_in + 1:
            gap, floor = _halves_gap(prev, cloud, check_size)
            if gap <= floor + tol:
                return cloud
    raise NoConvergence(f"successive clouds still differ after {max_iter} iterations")


# ---------------------------------------------------------------- geometric rate

@dataclass
class GeometricRateFit:
    """``e_n <= C / (1 + epsilon)**n`` on ``n_range``."""

    C: float
    epsilon: float
    r_squared: float
    n_range: tuple
    errors: np.ndarray
    noise: np.ndarray
    limit: float

    @property
    def rate(self) -> float:
        return 1.0 / (1.0 + self.epsilon)

    @property
    def contraction_epsilon(self) -> float:
        """The same decay written as ``(1 - eps)**n``."""
        return self.epsilon / (1.0 + self.epsilon)


def fit_geometric_rate(map: TransitionMap, kernel: ShockKernel, f: Callable, s_grid, n_max: int,
                       mc_n: int, stream, limit: Optional[float] = None, invariant_particles: int = 100_000,
                       invariant_burn_in: int = 200, noise_factor: float = 10.0) -> GeometricRateFit:
    """Fit ``log e_n = log C - n log(1 + eps)`` where
    ``e_n = max_s |T^n f(s) - integral of f against the invariant law|``.

    ``T^n f(s)`` is the mean of ``f`` over ``mc_n`` simulated ``n``-step
    successors of ``s`` (the same draws for every grid point).  Only
    iterations with ``e_n >= noise_factor * standard error`` enter the fit;
    ``C`` is raised above the least-squares intercept just enough to
    majorise every fitted point.
    """
    if n_max < 5:
        raise BadParameter("n_max must be >= 5")
    stream = as_stream(stream)
    grid = np.asarray(s_grid, dtype=float).reshape(-1, map.dim)
    if limit is None:
        inv = estimate_invariant(map, kernel, grid[0], invariant_burn_in, invariant_particles,
                                 stream=stream.substream("limit"), mode="cloud", tol=None)
        limit, limit_se = inv.expect_with_se(f)
    else:
        limit_se = 0.0
    errs = np.zeros(n_max)
    noise = np.zeros(n_max)
    clouds = np.repeat(grid, mc_n, axis=0)
    g = len(grid)
    for n in range(n_max):
        eps = kernel.sample(stream.substream("iter", n).generator(), mc_n)
        with np.errstate(all="ignore"):
            clouds = map(clouds, np.tile(eps, (g, 1)))
        if not np.all(np.isfinite(clouds)):
            raise NonFiniteState(f"non-finite state at iteration {n + 1}", index=n + 1)
        vals = np.asarray(f(clouds), dtype=float).reshape(g, mc_n)
        means = vals.mean(axis=1)
        ses = vals.std(axis=1, ddof=1) / math.sqrt(mc_n)
        gaps = np.abs(means - limit)
        k = int(np.argmax(gaps))
        errs[n] = gaps[k]
        noise[n] = math.hypot(ses[k], limit_se)
    ns = np.arange(1, n_max + 1)
    use = errs >= noise_factor * np.maximum(noise, 1e-300)
    if use.sum() < 3:
        raise RateNotGeometric("fewer than three iterations rise above the Monte Carlo noise")
    x, y = ns[use], np.log(errs[use])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    rate = math.exp(slope)
    if r2 < 0.9 or rate >= 1.0:
        raise RateNotGeometric(f"decay is not geometric (rate {rate:.4g}, r^2 {r2:.3g})")
    C = math.exp(intercept + max(0.0, float(resid.max())))
    return GeometricRateFit(C, 1.0 / rate - 1.0, r2, (int(x[0]), int(x[-1])), errs, noise, float(limit))


# ---------------------------------------------------------------- error bound

@dataclass
class BoundReport:
    lhs: float
    rhs: float
    slack: float
    satisfied: bool
    std_err: float
    epsilon: float
    epsilon_source: str


def check_error_bound(f: Callable, L: float, mu_star: EmpiricalMeasure, mu_hat_star: EmpiricalMeasure,
                      d_value: float, epsilon: float, epsilon_source: str = "user") -> BoundReport:
    """Compare ``|int f d mu* - int f d mu_hat*|`` with ``L * d_value / epsilon``.

    ``epsilon`` is the contraction margin (factor ``1 - epsilon`` per step);
    :attr:`GeometricRateFit.contraction_epsilon` converts a fitted rate.
    The slack is three combined standard errors of the two particle sums.
    """
    if not (L > 0 and epsilon > 0 and d_value >= 0):
        raise BadParameter("need L > 0, epsilon > 0 and d_value >= 0")
    m1, s1 = mu_star.expect_with_se(f)
    if mu_hat_star is mu_star:
        m2, s2 = m1, 0.0
        s1 = 0.0
    else:
        m2, s2 = mu_hat_star.expect_with_se(f)
    lhs = abs(m1 - m2)
    se = math.hypot(s1, s2)
    rhs = L * d_value / epsilon
    return BoundReport(lhs, rhs, 3.0 * se, bool(lhs <= rhs + 3.0 * se), se, epsilon, epsilon_source)


# ---------------------------------------------------------------- sweep

SWEEP_COLUMNS = ("j", "d_metric", "d_metric_se", "bl_distance", "bl_status", "prop2_rhs")


def invariant_convergence_sweep(family, kernel: ShockKernel, j_list, particles: int, stream, s0=None,
                                burn_in: int = 200, bank=None, compacts=None, mc_n: int = 1000,
                                grid_points: int = 21, epsilon: Optional[float] = None, L: float = 1.0,
                                mode: str = "cloud", threads: int = 1) -> list[dict]:
    """Per ``j``: BL distance between the invariant clouds of ``phi_j`` and
    ``phi`` next to the bank distance ``d(phi_j, phi)``.

    All clouds share the same shock draws.  ``prop2_rhs`` is
    ``L * d_T / epsilon`` with ``d_T`` the transport distance
    ``max_s E||phi_j - phi||`` (NaN when ``epsilon`` is not given).
    """
    from .approx import ExhaustingCompacts, default_bank, metric_d, metric_transport, realize

    j_list = list(j_list)
    if not j_list or any(b <= a for a, b in zip(j_list, j_list[1:])):
        raise BadParameter("j_list must be nonempty and ascending")
    stream = as_stream(stream)
    phi = family.exact
    if s0 is None:
        s0 = np.zeros(phi.dim) if phi.stationary is None else np.full(phi.dim, phi.stationary.location())
    if bank is None:
        bank = default_bank(phi.dim)
    if compacts is None:
        compacts = ExhaustingCompacts.from_kernel((2.0, 4.0, 8.0), kernel)
    inv_stream = stream.substream("invariant")
    mu = estimate_invariant(phi, kernel, s0, burn_in, particles, stream=inv_stream, mode=mode, tol=None)
    def point(j):
        phi_j = realize(family, j)
        mu_j = estimate_invariant(phi_j, kernel, s0, burn_in, particles, stream=inv_stream, mode=mode, tol=None)
        bl = bl_distance(mu_j, mu)
        dm = metric_d(phi_j, phi, kernel, bank, compacts, mc_n, stream.substream("metric"), grid_points)
        rhs = float("nan")
        if epsilon is not None:
            dt = metric_transport(phi_j, phi, kernel, compacts, mc_n, stream.substream("metric"), grid_points)
            rhs = L * dt.value / epsilon
        return {"j": j, "d_metric": dm.value, "d_metric_se": dm.std_err, "bl_distance": bl.value,
                "bl_status": bl.solver_status, "prop2_rhs": rhs}

    return parallel_map(point, j_list, threads)
