"""Indexed approximations ``phi_j`` of an exact map and estimators of the
functional distances between maps.

Two schemes are provided: piecewise-(multi)linear interpolation on a grid
that grows and refines with ``j``, and an explicit perturbation
``phi + delta(j) * shape``.  The distance estimators replace the supremum
over the whole state space by a supremum over a deterministic grid on a
compact ball, and report the shock-tail mass outside that ball.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dynsys import MeasurementMap, StateSpaceModel, TransitionMap
from .errors import BadIndex, BadParameter, MissingGradient
from .kernels import ShockKernel
from .rng import as_stream


# ---------------------------------------------------------------- schemes

@dataclass(frozen=True)
class ControlledPerturbation:
    """``phi_j = phi + delta(j) * shape`` with ``delta(j) = scale / j**power``.

    ``shape`` is ``None`` for the constant ``level``; otherwise a callable
    with the same signature as the map it perturbs (``shape_jac_s`` gives its
    state Jacobian, finite differences are used when absent).
    """

    scale: float = 1.0
    power: float = 1.0
    level: Union[float, Sequence[float]] = 1.0
    shape: Optional[Callable] = None
    shape_jac_s: Optional[Callable] = None

    def __post_init__(self):
        if self.scale < 0 or self.power <= 0:
            raise BadParameter("perturbation needs scale >= 0 and power > 0")

    def delta(self, j: int) -> float:
        return self.scale / j ** self.power


@dataclass(frozen=True)
class GridInterp:
    """Piecewise-linear interpolation in the state on ``[center - R(j), center + R(j)]``
    (per coordinate, intersected with ``[floor, inf)``) with mesh at most ``h(j)``.

    Beyond the grid the boundary cell is extended linearly.
    """

    radius: Callable[[int], float]
    mesh: Callable[[int], float]
    center: float = 0.0
    floor: Optional[float] = None

    @classmethod
    def power_law(cls, radius0, mesh0, radius_growth=0.0, mesh_power=1.0, center=0.0, floor=None):
        return cls(lambda j: radius0 + radius_growth * (j - 1), lambda j: mesh0 / j ** mesh_power,
                   center, floor)

    def nodes(self, j: int, dim: int) -> list[np.ndarray]:
        r, h = float(self.radius(j)), float(self.mesh(j))
        if not (r > 0 and h > 0):
            raise BadParameter("grid radius and mesh must be positive")
        lo = self.center - r if self.floor is None else max(self.center - r, self.floor)
        hi = self.center + r
        cells = max(1, int(math.ceil((hi - lo) / h - 1e-12)))
        return [np.linspace(lo, hi, cells + 1) for _ in range(dim)]


@dataclass(frozen=True)
class ApproximationFamily:
    exact: Union[TransitionMap, MeasurementMap]
    scheme: Union[GridInterp, ControlledPerturbation]
    monotone: bool = True

    def realize(self, j: int):
        return realize(self, j)


def realize(family: ApproximationFamily, j: int):
    """The ``j``-th approximation of ``family.exact``."""
    if int(j) != j or j < 1:
        raise BadIndex(f"approximation index must be an integer >= 1, got {j!r}")
    j = int(j)
    exact, scheme = family.exact, family.scheme
    if isinstance(scheme, ControlledPerturbation):
        if isinstance(exact, MeasurementMap):
            return _perturb_measurement(exact, scheme, j)
        return _perturb_transition(exact, scheme, j)
    if isinstance(scheme, GridInterp):
        if isinstance(exact, MeasurementMap):
            return _interp_measurement(exact, scheme, j)
        return _interp_transition(exact, scheme, j)
    raise BadParameter(f"unknown scheme {type(scheme).__name__}")


def _perturb_transition(phi: TransitionMap, sch: ControlledPerturbation, j: int) -> TransitionMap:
    delta = sch.delta(j)
    level = np.broadcast_to(np.asarray(sch.level, dtype=float), (phi.dim,)).copy()
    if sch.shape is None:
        def func(s, e):
            return phi.func(s, e) + delta * level
        jac_s = phi.jac_s
        meta = dict(phi.meta)
        if "linear" in meta:
            A, b = meta["linear"]
            meta["linear"] = (A, b + delta * level)
    else:
        def func(s, e):
            return phi.func(s, e) + delta * np.asarray(sch.shape(s, e)).reshape(s.shape[0], phi.dim)
        meta = {k: v for k, v in phi.meta.items() if k != "linear"}
        if phi.jac_s is not None and sch.shape_jac_s is not None:
            def jac_s(s, e):
                return phi.jac_s(s, e) + delta * sch.shape_jac_s(s, e)
        else:
            jac_s = None
    return replace(phi, func=func, jac_s=jac_s,
                   jac_eps=phi.jac_eps if sch.shape is None else None,
                   name=f"{phi.name}+pert[{j}]", stationary=None, meta=meta)


def _perturb_measurement(g: MeasurementMap, sch: ControlledPerturbation, j: int) -> MeasurementMap:
    delta = sch.delta(j)
    level = np.broadcast_to(np.asarray(sch.level, dtype=float), (g.obs_dim,)).copy()
    if sch.shape is None:
        def func(s, eta, e2):
            return g.func(s, eta, e2) + delta * level
        meta = dict(g.meta)
        if "linear" in meta:
            C, c0 = meta["linear"]
            meta["linear"] = (C, c0 + delta * level)
        return replace(g, func=func, name=f"{g.name}+pert[{j}]", meta=meta)

    def func(s, eta, e2):
        return g.func(s, eta, e2) + delta * np.asarray(sch.shape(s, eta, e2)).reshape(s.shape[0], g.obs_dim)
    return replace(g, func=func, jac_s=None, jac_eta=None, jac_eps2=None, additive_noise=False,
                   name=f"{g.name}+pert[{j}]", meta={})


def _corner_weights(nodes, s):
    """Cell indices, local coordinates and per-dimension mesh for each row."""
    idx, t, hh = [], [], []
    for k, nd in enumerate(nodes):
        h = nd[1] - nd[0]
        i = np.clip(np.floor((s[:, k] - nd[0]) / h).astype(int), 0, len(nd) - 2)
        idx.append(i)
        t.append((s[:, k] - nd[i]) / (nd[i + 1] - nd[i]))
        hh.append(nd[i + 1] - nd[i])
    return idx, t, hh


def _interp(nodes, s, fun, want_jac=False):
    """Multilinear interpolation of ``fun`` (row-wise, evaluated at grid
    corners) at states ``s``; optionally its state Jacobian."""
    n, d = s.shape
    idx, t, hh = _corner_weights(nodes, s)
    out = None
    jac = None
    for bits in itertools.product((0, 1), repeat=d):
        corner = np.stack([nodes[k][idx[k] + b] for k, b in enumerate(bits)], axis=1)
        w = np.ones(n)
        for k, b in enumerate(bits):
            w = w * (t[k] if b else 1.0 - t[k])
        val = fun(corner)
        out = w[:, None] * val if out is None else out + w[:, None] * val
        if want_jac:
            dw = np.empty((n, d))
            for k in range(d):
                part = np.ones(n)
                for m, b in enumerate(bits):
                    if m == k:
                        part = part * ((1.0 if b else -1.0) / hh[m])
                    else:
                        part = part * (t[m] if b else 1.0 - t[m])
                dw[:, k] = part
            term = val[:, :, None] * dw[:, None, :]
            jac = term if jac is None else jac + term
    return (out, jac) if want_jac else out


def _interp_transition(phi: TransitionMap, sch: GridInterp, j: int) -> TransitionMap:
    nodes = sch.nodes(j, phi.dim)

    def func(s, e):
        return _interp(nodes, s, lambda c: phi.func(c, e))

    def jac_s(s, e):
        return _interp(nodes, s, lambda c: phi.func(c, e), want_jac=True)[1]

    def jac_eps(s, e):
        return _interp(nodes, s, lambda c: phi.grad_eps(c, e).reshape(s.shape[0], -1)).reshape(
            s.shape[0], phi.dim, phi.shock_dim)

    return replace(phi, func=func, jac_s=jac_s, jac_eps=jac_eps, name=f"{phi.name}~grid[{j}]",
                   stationary=None, meta={"nodes": nodes})


def _interp_measurement(g: MeasurementMap, sch: GridInterp, j: int) -> MeasurementMap:
    nodes = sch.nodes(j, g.state_dim)

    def func(s, eta, e2):
        return _interp(nodes, s, lambda c: g.func(c, eta, e2))

    def jac_s(s, eta, e2):
        return _interp(nodes, s, lambda c: g.func(c, eta, e2), want_jac=True)[1]

    return replace(g, func=func, jac_s=jac_s, jac_eta=None, jac_eps2=None,
                   name=f"{g.name}~grid[{j}]", meta={"nodes": nodes})


# ---------------------------------------------------------------- test functions

class TestFunctionBank:
    """Finite family of smooth functions with ``|f| <= 1`` and Lipschitz constant <= 1.

    Members are ``tanh(w.x + b)`` and ``cos(w.x + b)`` with ``||w|| <= 1``, and
    Gaussian bumps ``exp(-||x - c||^2 / (2 l^2))`` with ``l >= exp(-1/2)``.
    """

    __test__ = False

    def __init__(self, dim, tanh=(), cos=(), bumps=()):
        self.dim = dim
        self.tanh_w, self.tanh_b = self._affine(tanh, dim)
        self.cos_w, self.cos_b = self._affine(cos, dim)
        if bumps:
            self.bump_c = np.array([np.atleast_1d(c) for c, _ in bumps], dtype=float).reshape(-1, dim)
            self.bump_l = np.array([max(l, math.exp(-0.5)) for _, l in bumps], dtype=float)
        else:
            self.bump_c, self.bump_l = np.empty((0, dim)), np.empty(0)
        for w in (self.tanh_w, self.cos_w):
            if w.size and np.max(np.linalg.norm(w, axis=1)) > 1 + 1e-12:
                raise BadParameter("test-function slopes must have norm <= 1")
        if len(self) == 0:
            raise BadParameter("test-function bank is empty")

    @staticmethod
    def _affine(members, dim):
        if not members:
            return np.empty((0, dim)), np.empty(0)
        w = np.array([np.atleast_1d(w) for w, _ in members], dtype=float).reshape(-1, dim)
        b = np.array([b for _, b in members], dtype=float)
        return w, b

    def __len__(self):
        return len(self.tanh_b) + len(self.cos_b) + len(self.bump_l)

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        parts = [np.tanh(x @ self.tanh_w.T + self.tanh_b), np.cos(x @ self.cos_w.T + self.cos_b)]
        if self.bump_l.size:
            r2 = np.sum((x[:, None, :] - self.bump_c[None]) ** 2, axis=2)
            parts.append(np.exp(-0.5 * r2 / self.bump_l ** 2))
        return np.concatenate(parts, axis=1)

    def grads(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        th = np.tanh(x @ self.tanh_w.T + self.tanh_b)
        parts = [(1 - th ** 2)[:, :, None] * self.tanh_w[None],
                 -np.sin(x @ self.cos_w.T + self.cos_b)[:, :, None] * self.cos_w[None]]
        if self.bump_l.size:
            diff = x[:, None, :] - self.bump_c[None]
            val = np.exp(-0.5 * np.sum(diff ** 2, axis=2) / self.bump_l ** 2)
            parts.append(-(val / self.bump_l ** 2)[:, :, None] * diff)
        return np.concatenate(parts, axis=1)

    def check(self, rng, n=2000, radius=10.0):
        """Sampled ``(max |f|, max ||grad f||)``; both must be <= 1 + 1e-9."""
        x = rng.uniform(-radius, radius, size=(n, self.dim))
        return float(np.abs(self.values(x)).max()), float(np.linalg.norm(self.grads(x), axis=2).max())


def default_bank(dim=1, centers=None, slopes=(1.0, 0.5), phases=4, bump_scale=1.0) -> TestFunctionBank:
    """Tanh ramps and bumps centred on ``centers`` plus cosines of several phases.

    In ``dim > 1`` the ramp and cosine directions are the coordinate axes.
    """
    if centers is None:
        centers = np.linspace(-4.0, 4.0, 9)
    centers = np.asarray(centers, dtype=float).reshape(-1, dim) if dim > 1 else np.asarray(centers, float).reshape(-1, 1)
    dirs = np.eye(dim)
    tanh, cos, bumps = [], [], []
    for a in slopes:
        for u in dirs:
            w = a * u
            for c in centers:
                tanh.append((w, -float(w @ c)))
            for p in range(phases):
                cos.append((w, 2 * math.pi * p / phases))
    for c in centers:
        bumps.append((c, bump_scale))
    return TestFunctionBank(dim, tanh=tanh, cos=cos, bumps=bumps)


@dataclass(frozen=True)
class ExhaustingCompacts:
    """Nested balls ``{||s - center|| <= R_i}`` with the shock-tail mass beyond each radius."""

    radii: tuple
    tail_mass: tuple
    center: Union[float, tuple] = 0.0

    @classmethod
    def from_kernel(cls, radii, kernel: ShockKernel, center=0.0):
        radii = tuple(float(r) for r in radii)
        if not radii or any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] <= 0:
            raise BadParameter("radii must be positive and strictly increasing")
        tails = tuple(kernel.tail_mass(r) for r in radii)
        # strict decrease is required only while the bound is informative
        if any(b > a or (0 < a < 1 and b == a) for a, b in zip(tails, tails[1:])):
            raise BadParameter("tail masses must decrease strictly with the radius")
        return cls(radii, tails, center)

    def contains(self, s, i=-1) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.linalg.norm(s - np.asarray(self.center), axis=-1) <= self.radii[i] * (1 + 1e-12)

    def grid(self, points: int, dim: int = 1, i: int = -1) -> np.ndarray:
        """Tensor grid on the ``i``-th ball, ``points`` per axis (odd counts nest)."""
        if points < 2:
            raise BadParameter("need at least two grid points per axis")
        r = self.radii[i]
        k = np.arange(points)
        axis = (-r * (points - 1 - k) + r * k) / (points - 1)
        center = np.broadcast_to(np.asarray(self.center, dtype=float), (dim,))
        mesh = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        mesh = mesh[np.linalg.norm(mesh, axis=1) <= r * (1 + 1e-12)]
        return mesh + center


# ---------------------------------------------------------------- estimators

@dataclass
class MetricEstimate:
    metric: str
    value: float
    std_err: float
    tail_bound: float
    grid_points: int
    mc_n: int
    argmax: Optional[np.ndarray] = None
    per_compact: list = field(default_factory=list)


def _cell_draws(stream, kernel, point, mc_n):
    return kernel.sample(stream.substream("cell", np.asarray(point, dtype=float)).generator(), mc_n)


def metric_d(phi: TransitionMap, phi_hat: TransitionMap, kernel: ShockKernel, bank: TestFunctionBank,
             compacts: ExhaustingCompacts, mc_n: int, stream, grid_points: int = 41) -> MetricEstimate:
    """max over bank and grid of the MC mean of ``|f(phi(s, e)) - f(phi_hat(s, e))|``.

    Both maps see the same shock draws; the draws at a grid point depend only
    on its coordinates, so a refined grid reuses them.
    """
    if mc_n < 100:
        raise BadParameter("mc_n must be >= 100")
    stream = as_stream(stream)
    grid = compacts.grid(grid_points, phi.dim)
    best, best_se, arg = -1.0, 0.0, None
    for g in grid:
        eps = _cell_draws(stream, kernel, g, mc_n)
        s = np.broadcast_to(g, (mc_n, phi.dim))
        diff = np.abs(bank.values(phi(s, eps)) - bank.values(phi_hat(s, eps)))
        means = diff.mean(axis=0)
        k = int(np.argmax(means))
        if means[k] > best:
            best, arg = float(means[k]), g
            best_se = float(diff[:, k].std(ddof=1) / math.sqrt(mc_n))
    return MetricEstimate("d", best, best_se, compacts.tail_mass[-1], len(grid), mc_n, arg)


def metric_transport(phi: TransitionMap, phi_hat: TransitionMap, kernel: ShockKernel,
                     compacts: ExhaustingCompacts, mc_n: int, stream, grid_points: int = 41) -> MetricEstimate:
    """Grid max of the MC mean of ``||phi(s, e) - phi_hat(s, e)||`` (Euclidean).

    Every bank member is 1-Lipschitz, so this dominates :func:`metric_d`
    whenever it is below 2.
    """
    stream = as_stream(stream)
    grid = compacts.grid(grid_points, phi.dim)
    best, best_se, arg = -1.0, 0.0, None
    for g in grid:
        eps = _cell_draws(stream, kernel, g, mc_n)
        s = np.broadcast_to(g, (mc_n, phi.dim))
        z = np.linalg.norm(phi(s, eps) - phi_hat(s, eps), axis=1)
        if z.mean() > best:
            best, arg = float(z.mean()), g
            best_se = float(z.std(ddof=1) / math.sqrt(mc_n))
    return MetricEstimate("transport", best, best_se, compacts.tail_mass[-1], len(grid), mc_n, arg)


def _max_norm(x):
    return np.max(np.abs(x), axis=-1) if x.shape[-1] else np.zeros(x.shape[:-1])


def _op_inf_norm(J):
    return np.max(np.sum(np.abs(J), axis=-1), axis=-1) if J.shape[-2] else np.zeros(J.shape[0])


def measurement_as_transition(g: MeasurementMap) -> TransitionMap:
    """View ``g(s, eta, eps2)`` as a map of ``s`` driven by the shock ``(eta, eps2)``."""
    q = g.noise_dim

    def func(s, e):
        return g(s, e[:, :q], e[:, q:])

    def jac_s(s, e):
        return g.grad_s(s, e[:, :q], e[:, q:])

    return TransitionMap(func, g.state_dim, g.noise_dim + g.eps2_dim, jac_s=jac_s,
                         name=g.name, differentiable=g.differentiable)


def metric_dC1(phi, phi_hat, kernel: ShockKernel, compacts: ExhaustingCompacts, mc_n: int, stream,
               grid_points: int = 41) -> MetricEstimate:
    """``max_i sup_{s in S_i}`` of ``E||phi - phi_hat|| + E||grad phi - grad phi_hat||``.

    Vectors use the max norm and Jacobians the induced (max row-sum) norm.
    Measurement maps are accepted and driven by ``kernel`` on ``(eta, eps2)``.
    """
    if isinstance(phi, MeasurementMap):
        phi = measurement_as_transition(phi)
    if isinstance(phi_hat, MeasurementMap):
        phi_hat = measurement_as_transition(phi_hat)
    for m in (phi, phi_hat):
        if m.jac_s is None and not m.differentiable:
            raise MissingGradient(f"map {m.name!r} has neither analytic nor finite-difference gradients")
    stream = as_stream(stream)
    grid = compacts.grid(grid_points, phi.dim)
    vals = np.empty(len(grid))
    ses = np.empty(len(grid))
    for n_, g in enumerate(grid):
        eps = _cell_draws(stream, kernel, g, mc_n)
        s = np.broadcast_to(g, (mc_n, phi.dim)).copy()
        z = _max_norm(phi(s, eps) - phi_hat(s, eps)) + _op_inf_norm(phi.grad_s(s, eps) - phi_hat.grad_s(s, eps))
        vals[n_] = z.mean()
        ses[n_] = z.std(ddof=1) / math.sqrt(mc_n) if mc_n > 1 else 0.0
    per = []
    for i in range(len(compacts.radii)):
        inside = compacts.contains(grid, i)
        per.append(float(vals[inside].max()) if inside.any() else 0.0)
    k = int(np.argmax(vals))
    return MetricEstimate("dC1", float(vals[k]), float(ses[k]), compacts.tail_mass[-1], len(grid), mc_n,
                          grid[k], per)


def operator_strong_convergence(family: ApproximationFamily, kernel: ShockKernel, bank: TestFunctionBank,
                                compacts: ExhaustingCompacts, j_list, mc_n: int, stream,
                                grid_points: int = 41) -> list[dict]:
    """Per ``j``: ``max_{f, s} |T_j f(s) - T f(s)|`` with common draws across ``j``."""
    j_list = list(j_list)
    if not j_list or any(b <= a for a, b in zip(j_list, j_list[1:])):
        raise BadParameter("j_list must be nonempty and ascending")
    stream = as_stream(stream)
    phi = family.exact
    maps = [realize(family, j) for j in j_list]
    grid = compacts.grid(grid_points, phi.dim)
    best = np.full(len(j_list), -1.0)
    best_se = np.zeros(len(j_list))
    for g in grid:
        eps = _cell_draws(stream, kernel, g, mc_n)
        s = np.broadcast_to(g, (mc_n, phi.dim))
        base = bank.values(phi(s, eps))
        for r, mj in enumerate(maps):
            diff = bank.values(mj(s, eps)) - base
            gap = np.abs(diff.mean(axis=0))
            k = int(np.argmax(gap))
            if gap[k] > best[r]:
                best[r] = gap[k]
                best_se[r] = diff[:, k].std(ddof=1) / math.sqrt(mc_n)
    return [{"j": j, "value": float(v), "std_err": float(se), "grid_points": len(grid), "mc_n": mc_n}
            for j, v, se in zip(j_list, best, best_se)]


def realize_model(model: StateSpaceModel, phi_family: Optional[ApproximationFamily],
                  g_family: Optional[ApproximationFamily], j: int) -> StateSpaceModel:
    """State-space model with ``(phi_j, g_j)``; linear-Gaussian metadata is kept when exact."""
    phi_j = realize(phi_family, j) if phi_family is not None else model.transition
    g_j = realize(g_family, j) if g_family is not None else model.measurement
    meta = dict(model.meta)
    lg = meta.get("linear_gaussian")
    if lg is not None:
        if "linear" in phi_j.meta and "linear" in g_j.meta:
            lg = dict(lg)
            lg["A"], lg["b"] = phi_j.meta["linear"]
            lg["C"], lg["c0"] = g_j.meta["linear"]
            meta["linear_gaussian"] = lg
        else:
            meta.pop("linear_gaussian")
    return model.with_maps(phi_j, g_j, meta=meta, name=f"{model.name}[{j}]")
