"""Random dynamical systems ``s' = phi(s, eps)`` and measured systems.

All maps are vectorised over a leading sample axis: a transition takes
states of shape ``(n, d)`` and shocks of shape ``(n, k)`` and returns
``(n, d)``.  Single states are plain 1-D arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import BadParameter, InconsistentData, MissingGradient, NonFiniteState, NotInvertible
from .kernels import LogNormalKernel, NormalKernel, ShockKernel
from .rng import as_generator

Array = np.ndarray


def as_state(s, dim: int) -> Array:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (dim,):
        raise BadParameter(f"expected a state of dimension {dim}, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NonFiniteState("state has non-finite coordinates")
    return s


def _rows(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, dim) if dim else x.reshape(-1, 0)
    return x


def fd_step(s: Array) -> Array:
    """Central-difference step, scaled by the size of each row."""
    return 1e-5 * (1.0 + np.linalg.norm(s, axis=1))


def _fd_jacobian(fun, x, one_sided=False):
    """Jacobian of a row-wise map by finite differences, shape (n, out, in)."""
    n, k = x.shape
    h = fd_step(x)
    cols = []
    base = fun(x) if one_sided else None
    for i in range(k):
        e = np.zeros_like(x)
        e[:, i] = h
        if one_sided:
            cols.append((fun(x + e) - base) / h[:, None])
        else:
            cols.append((fun(x + e) - fun(x - e)) / (2.0 * h[:, None]))
    if not cols:
        out = fun(x).shape[1]
        return np.zeros((n, out, 0))
    return np.stack(cols, axis=2)


@dataclass(frozen=True)
class StationaryLaw:
    """Closed-form long-run law attached to zoo models.

    ``kind`` is ``"normal"`` (state itself), ``"lognormal"`` (``mean`` and
    ``var`` are those of the log state) or ``"point"``.
    """

    kind: str
    mean: float
    var: float

    def location(self) -> float:
        """A typical state: the mean, or the median for ``"lognormal"``."""
        return math.exp(self.mean) if self.kind == "lognormal" else self.mean

    def quantile_atoms(self, n: int) -> Array:
        from scipy.special import ndtri

        u = (np.arange(n) + 0.5) / n
        if self.kind == "point":
            return np.full((n, 1), self.mean)
        z = self.mean + math.sqrt(self.var) * ndtri(u)
        return (np.exp(z) if self.kind == "lognormal" else z)[:, None]


@dataclass(frozen=True, eq=False)
class TransitionMap:
    """Law of motion ``phi(s, eps; theta)``."""

    func: Callable[[Array, Array], Array]
    dim: int
    shock_dim: int
    theta: tuple = ()
    jac_s: Optional[Callable[[Array, Array], Array]] = None
    jac_eps: Optional[Callable[[Array, Array], Array]] = None
    name: str = ""
    kernel: Optional[ShockKernel] = None
    stationary: Optional[StationaryLaw] = None
    meta: Mapping = field(default_factory=dict)
    differentiable: bool = True

    def __call__(self, s, eps) -> Array:
        s = _rows(s, self.dim)
        eps = _rows(eps, self.shock_dim)
        return np.asarray(self.func(s, eps), dtype=float).reshape(s.shape[0], self.dim)

    def grad_s(self, s, eps) -> Array:
        s = _rows(s, self.dim)
        eps = _rows(eps, self.shock_dim)
        if self.jac_s is not None:
            return np.asarray(self.jac_s(s, eps), dtype=float).reshape(s.shape[0], self.dim, self.dim)
        if not self.differentiable:
            raise MissingGradient(f"map {self.name!r} has no gradient")
        return _fd_jacobian(lambda x: self(x, eps), s)

    def grad_eps(self, s, eps) -> Array:
        s = _rows(s, self.dim)
        eps = _rows(eps, self.shock_dim)
        if self.jac_eps is not None:
            return np.asarray(self.jac_eps(s, eps), dtype=float).reshape(
                s.shape[0], self.dim, self.shock_dim)
        if not self.differentiable:
            raise MissingGradient(f"map {self.name!r} has no gradient")
        return _fd_jacobian(lambda e: self(s, e), eps)


@dataclass(frozen=True, eq=False)
class MeasurementMap:
    """Measurement ``y = g(s, eta, eps2; theta)``.

    ``additive_noise`` declares ``y = g(s, 0, eps2) + eta``, which lets the
    shocks be solved without a user-supplied inverse.
    """

    func: Callable[[Array, Array, Array], Array]
    state_dim: int
    obs_dim: int
    noise_dim: int
    eps2_dim: int = 0
    theta: tuple = ()
    jac_s: Optional[Callable] = None
    jac_eta: Optional[Callable] = None
    jac_eps2: Optional[Callable] = None
    additive_noise: bool = False
    name: str = ""
    meta: Mapping = field(default_factory=dict)
    differentiable: bool = True

    def __post_init__(self):
        if self.eps2_dim + self.noise_dim != self.obs_dim:
            raise BadParameter(
                "dim(eps2) + dim(eta) must equal dim(y) for a nonsingular change of variables")

    def __call__(self, s, eta, eps2=None) -> Array:
        s = _rows(s, self.state_dim)
        eta = _rows(eta, self.noise_dim)
        eps2 = np.empty((s.shape[0], 0)) if eps2 is None else _rows(eps2, self.eps2_dim)
        return np.asarray(self.func(s, eta, eps2), dtype=float).reshape(s.shape[0], self.obs_dim)

    def _jac(self, which, s, eta, eps2, one_sided=False):
        s = _rows(s, self.state_dim)
        eta = _rows(eta, self.noise_dim)
        eps2 = _rows(eps2, self.eps2_dim)
        analytic = {"s": self.jac_s, "eta": self.jac_eta, "eps2": self.jac_eps2}[which]
        width = {"s": self.state_dim, "eta": self.noise_dim, "eps2": self.eps2_dim}[which]
        if analytic is not None and not one_sided:
            return np.asarray(analytic(s, eta, eps2), dtype=float).reshape(
                s.shape[0], self.obs_dim, width)
        if not self.differentiable:
            raise MissingGradient(f"measurement {self.name!r} has no gradient")
        if which == "s":
            return _fd_jacobian(lambda x: self(x, eta, eps2), s, one_sided)
        if which == "eta":
            return _fd_jacobian(lambda x: self(s, x, eps2), eta, one_sided)
        return _fd_jacobian(lambda x: self(s, eta, x), eps2, one_sided)

    def grad_s(self, s, eta, eps2, one_sided=False):
        return self._jac("s", s, eta, eps2, one_sided)

    def grad_eta(self, s, eta, eps2, one_sided=False):
        return self._jac("eta", s, eta, eps2, one_sided)

    def grad_eps2(self, s, eta, eps2, one_sided=False):
        return self._jac("eps2", s, eta, eps2, one_sided)


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Transition + measurement with the shock partition ``(eps1, eps2, eta)``.

    ``shock_kernel`` is the law of the full transition shock
    ``eps = (eps1, eps2)``; ``noise_kernel`` is the law of ``eta``.
    ``inverse(s_prev, eps1, y) -> (eta, s, eps2)`` may be supplied when the
    measurement is not additive.  ``newton=True`` solves the shocks
    numerically from the measurement Jacobians instead.
    """

    transition: TransitionMap
    measurement: MeasurementMap
    shock_kernel: ShockKernel
    noise_kernel: ShockKernel
    partition: tuple
    inverse: Optional[Callable] = None
    newton: bool = False
    name: str = ""
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        k1, k2, q = self.partition
        if k1 + k2 != self.shock_kernel.dim:
            raise BadParameter("dim(eps1) + dim(eps2) must equal the shock kernel dimension")
        if self.transition.shock_dim != k1 + k2:
            raise BadParameter("transition shock dimension disagrees with the partition")
        if self.noise_kernel.dim != q or self.measurement.noise_dim != q:
            raise BadParameter("noise kernel / measurement noise dimension disagrees with dim(eta)")
        if self.measurement.eps2_dim != k2:
            raise BadParameter("measurement eps2 dimension disagrees with the partition")
        if k2 + q != self.measurement.obs_dim:
            raise BadParameter(
                "dim(eps2) + dim(eta) must equal dim(y) for a nonsingular change of variables")
        if self.measurement.state_dim != self.transition.dim:
            raise BadParameter("measurement state dimension disagrees with the transition")

    @property
    def state_dim(self):
        return self.transition.dim

    @property
    def obs_dim(self):
        return self.measurement.obs_dim

    @property
    def eps1_kernel(self) -> ShockKernel:
        return self.shock_kernel.marginal(np.arange(self.partition[0]))

    @property
    def eps2_kernel(self) -> ShockKernel:
        k1, k2, _ = self.partition
        return self.shock_kernel.marginal(np.arange(k1, k1 + k2))

    def with_maps(self, transition=None, measurement=None, **changes) -> "StateSpaceModel":
        from dataclasses import replace

        return replace(self, transition=transition or self.transition,
                       measurement=measurement or self.measurement, **changes)


# ---------------------------------------------------------------- operations

def step(map: TransitionMap, kernel: ShockKernel, s, stream, shock=None) -> Array:
    """One transition; draws exactly one shock unless ``shock`` is forced."""
    s = as_state(s, map.dim)
    if shock is None:
        eps = kernel.sample(as_generator(stream), 1)
    else:
        eps = np.asarray(shock, dtype=float).reshape(1, map.shock_dim)
    with np.errstate(all="ignore"):
        out = map(s[None, :], eps)[0]
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(f"non-finite state after step from {s}", index=1)
    return out


def simulate_path(map: TransitionMap, kernel: ShockKernel, s0, n: int, stream) -> Array:
    """Path ``[s0, s1, ..., sn]`` of shape (n + 1, d).

    The n shocks are drawn in one block from the stream, in step order.
    """
    if n < 0:
        raise BadParameter("n must be >= 0")
    s0 = as_state(s0, map.dim)
    path = np.empty((n + 1, map.dim))
    path[0] = s0
    if n == 0:
        return path
    eps = kernel.sample(as_generator(stream), n)
    func = map.func
    s = s0[None, :]
    with np.errstate(all="ignore"):
        for k in range(n):
            s = func(s, eps[k:k + 1])
            path[k + 1] = s
    bad = ~np.all(np.isfinite(path), axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise NonFiniteState(f"non-finite state at step {k}", index=k)
    return path


def _solve_step(model: StateSpaceModel, s_prev, eps1, y, tol=1e-12, max_iter=50):
    """Vectorised shock inversion for one period: returns (eta, s, eps2)."""
    k1, k2, q = model.partition
    n = s_prev.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=float), (n, model.obs_dim))
    if model.inverse is not None:
        eta, s, eps2 = model.inverse(s_prev, eps1, y)
        return (np.asarray(eta, float).reshape(n, q), np.asarray(s, float).reshape(n, -1),
                np.asarray(eps2, float).reshape(n, k2))
    g = model.measurement
    if g.additive_noise and k2 == 0:
        s = model.transition(s_prev, eps1)
        eta = y - g(s, np.zeros((n, q)), np.empty((n, 0)))
        return eta, s, np.empty((n, 0))
    if model.newton:
        def resid(u):
            e2, et = u[:, :k2], u[:, k2:]
            st = model.transition(s_prev, np.concatenate([eps1, e2], axis=1))
            return st, g(st, et, e2) - y

        # damped Newton: halve the step until the residual norm drops
        u = np.zeros((n, k2 + q))
        s, r = resid(u)
        norm = np.max(np.abs(r), axis=1)
        for _ in range(max_iter):
            if np.max(norm) <= tol:
                break
            J = _total_jacobian(model, s_prev, eps1, u[:, k2:], u[:, :k2], s=s)
            step_ = np.linalg.solve(J, r[:, :, None])[:, :, 0]  # ordered (eta, eps2) like J
            du = np.concatenate([step_[:, q:], step_[:, :q]], axis=1)
            lam = np.ones(n)
            for _ in range(40):
                with np.errstate(all="ignore"):
                    s_try, r_try = resid(u - lam[:, None] * du)
                n_try = np.max(np.abs(r_try), axis=1)
                ok = np.isfinite(n_try) & (n_try < norm)
                if ok.all():
                    break
                lam = np.where(ok, lam, 0.5 * lam)
            u = u - lam[:, None] * du
            s, r = resid(u)
            norm = np.max(np.abs(r), axis=1)
        eps2, eta = u[:, :k2], u[:, k2:]
        return eta, s, eps2
    raise NotInvertible(f"model {model.name!r} declares no way to solve its shocks")


def _total_jacobian(model, s_prev, eps1, eta, eps2, s=None, one_sided=False):
    """d y / d (eta, eps2), with eps2 acting directly and through the state."""
    k1, k2, q = model.partition
    g = model.measurement
    eps = np.concatenate([eps1, eps2], axis=1)
    if s is None:
        s = model.transition(s_prev, eps)
    d_eta = g.grad_eta(s, eta, eps2, one_sided)
    if k2 == 0:
        return d_eta
    d_s = g.grad_s(s, eta, eps2, one_sided)
    d_phi = model.transition.grad_eps(s_prev, eps)[:, :, k1:]
    d_eps2 = g.grad_eps2(s, eta, eps2, one_sided) + d_s @ d_phi
    return np.concatenate([d_eta, d_eps2], axis=2)


def solve_shocks(model: StateSpaceModel, eps1_path, s0, y_path, theta=None, atol=1e-10):
    """Recover ``(eta_path, s_path, eps2_path)`` from observations.

    ``s_path[t]`` is the state that generated ``y_path[t]`` (periods 1..T).
    """
    k1, k2, q = model.partition
    y_path = np.asarray(y_path, dtype=float).reshape(-1, model.obs_dim)
    T = y_path.shape[0]
    eps1_path = np.asarray(eps1_path, dtype=float).reshape(T, k1)
    s = as_state(s0, model.state_dim)[None, :]
    etas, states, eps2s = np.empty((T, q)), np.empty((T, model.state_dim)), np.empty((T, k2))
    for t in range(T):
        eta, s, eps2 = _solve_step(model, s, eps1_path[t:t + 1], y_path[t])
        etas[t], states[t], eps2s[t] = eta[0], s[0], eps2[0]
    y_hat = reconstruct_observations(model, eps1_path, s0, etas, eps2s)
    resid = np.max(np.abs(y_hat - y_path)) if T else 0.0
    if not resid <= atol:
        raise InconsistentData(f"solved shocks reproduce y only to {resid:.3e}")
    return etas, states, eps2s


def reconstruct_observations(model, eps1_path, s0, eta_path, eps2_path):
    """Run the transition and measurement forward from given shocks."""
    s = as_state(s0, model.state_dim)[None, :]
    T = len(eta_path)
    ys = np.empty((T, model.obs_dim))
    for t in range(T):
        eps = np.concatenate([np.reshape(eps1_path[t], (1, -1)), np.reshape(eps2_path[t], (1, -1))], axis=1)
        s = model.transition(s, eps)
        ys[t] = model.measurement(s, np.reshape(eta_path[t], (1, -1)), np.reshape(eps2_path[t], (1, -1)))[0]
    return ys


def simulate_observations(model: StateSpaceModel, s0, T: int, stream):
    """Simulate ``T`` periods; returns a dict with ``y``, ``s``, ``eps1``, ``eps2``, ``eta``."""
    k1, k2, q = model.partition
    rng = as_generator(stream)
    eps = model.shock_kernel.sample(rng, T)
    eta = model.noise_kernel.sample(rng, T)
    y = reconstruct_observations(model, eps[:, :k1], s0, eta, eps[:, k1:])
    states = np.empty((T, model.state_dim))
    s = as_state(s0, model.state_dim)[None, :]
    for t in range(T):
        s = model.transition(s, eps[t:t + 1])
        states[t] = s[0]
    return {"y": y, "s": states, "eps1": eps[:, :k1], "eps2": eps[:, k1:], "eta": eta}


# ---------------------------------------------------------------- model zoo

def _linear_map(A, b, name, kernel=None, stationary=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    d = A.shape[0]
    eye = np.eye(d)
    return TransitionMap(
        func=lambda s, e: s @ A.T + b + e,
        dim=d, shock_dim=d,
        jac_s=lambda s, e: np.broadcast_to(A, (s.shape[0], d, d)),
        jac_eps=lambda s, e: np.broadcast_to(eye, (s.shape[0], d, d)),
        name=name, kernel=kernel, stationary=stationary,
        meta={"linear": (A, b)})


def linear_gaussian_model(A, C, q_std, r_std, b=None, c0=None, name="linear_gaussian"):
    """``s' = A s + b + eps``, ``y = C s + c0 + eta`` with diagonal Gaussian noises."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d, m = A.shape[0], C.shape[0]
    b = np.zeros(d) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    c0 = np.zeros(m) if c0 is None else np.atleast_1d(np.asarray(c0, dtype=float))
    if A.shape != (d, d) or C.shape[1] != d:
        raise BadParameter("A must be square and C must have as many columns as A")
    shock = NormalKernel(np.zeros(d), q_std)
    noise = NormalKernel(np.zeros(m), r_std)
    if shock.dim != d or noise.dim != m:
        raise BadParameter("noise scales must match the state/observation dimensions")
    stationary = None
    if d == 1 and abs(A[0, 0]) < 1:
        a = A[0, 0]
        stationary = StationaryLaw("normal", b[0] / (1 - a), shock.std[0] ** 2 / (1 - a * a))
    phi = _linear_map(A, b, name + ".phi", kernel=shock, stationary=stationary)
    g = MeasurementMap(
        func=lambda s, eta, e2: s @ C.T + c0 + eta,
        state_dim=d, obs_dim=m, noise_dim=m,
        jac_s=lambda s, eta, e2: np.broadcast_to(C, (s.shape[0], m, d)),
        jac_eta=lambda s, eta, e2: np.broadcast_to(np.eye(m), (s.shape[0], m, m)),
        jac_eps2=lambda s, eta, e2: np.zeros((s.shape[0], m, 0)),
        additive_noise=True, name=name + ".g", meta={"linear": (C, c0)})
    meta = {"linear_gaussian": {"A": A, "b": b, "Q": np.diag(shock.std ** 2),
                                "C": C, "c0": c0, "R": np.diag(noise.std ** 2)}}
    return StateSpaceModel(phi, g, shock, noise, (d, 0, m), name=name, meta=meta)


def zoo_linear_gaussian(a, sigma_w, c=1.0, sigma_y=1.0) -> StateSpaceModel:
    """Scalar AR(1) state observed with additive Gaussian noise."""
    if not abs(a) < 1:
        raise BadParameter("|a| must be < 1")
    if not (sigma_w > 0 and sigma_y > 0):
        raise BadParameter("sigma_w and sigma_y must be > 0")
    return linear_gaussian_model([[a]], [[c]], [sigma_w], [sigma_y])


def zoo_ar1(a, sigma) -> TransitionMap:
    """``phi(s, eps) = a s + eps`` with ``eps ~ N(0, sigma^2)``."""
    return zoo_contraction(a, 0.0, sigma)


def zoo_contraction(a, shift=0.0, sigma=1.0) -> TransitionMap:
    """``phi(s, eps) = a s + shift + eps``; ``sigma = 0`` gives a deterministic map."""
    if not abs(a) < 1:
        raise BadParameter("|a| must be < 1")
    if sigma < 0:
        raise BadParameter("sigma must be >= 0")
    if sigma == 0:
        m = deterministic_map(lambda s: a * s + shift, 1, name=f"contraction({a},{shift})",
                              jac=lambda s: np.full((s.shape[0], 1, 1), a))
        return _with(m, stationary=StationaryLaw("point", shift / (1 - a), 0.0),
                     meta={"linear": (np.array([[a]]), np.array([shift]))})
    kernel = NormalKernel([0.0], [sigma])
    law = StationaryLaw("normal", shift / (1 - a), sigma ** 2 / (1 - a * a))
    return _linear_map([[a]], [shift], f"contraction({a},{shift})", kernel, law)


def zoo_log_growth(alpha, beta, sigma) -> TransitionMap:
    """``k' = alpha beta k^alpha eps`` with ``log eps ~ N(0, sigma^2)``."""
    if not (0 < alpha < 1 and 0 < beta < 1 and sigma > 0):
        raise BadParameter("need 0 < alpha < 1, 0 < beta < 1, sigma > 0")
    ab = alpha * beta
    law = StationaryLaw("lognormal", math.log(ab) / (1 - alpha), sigma ** 2 / (1 - alpha ** 2))

    def func(k, e):
        return ab * k ** alpha * e

    def jac_s(k, e):
        return (ab * alpha * k ** (alpha - 1) * e)[:, :, None]

    def jac_eps(k, e):
        return (ab * k ** alpha)[:, :, None]

    return TransitionMap(func, 1, 1, theta=(alpha, beta, sigma), jac_s=jac_s, jac_eps=jac_eps,
                         name=f"log_growth({alpha},{beta},{sigma})",
                         kernel=LogNormalKernel([0.0], [sigma]), stationary=law)


def deterministic_map(f, dim, name="deterministic", jac=None) -> TransitionMap:
    """Wrap ``s -> f(s)`` as a transition that ignores a dummy N(0,1) shock."""
    return TransitionMap(
        func=lambda s, e: f(s), dim=dim, shock_dim=1,
        jac_s=(lambda s, e: jac(s)) if jac is not None else None,
        jac_eps=lambda s, e: np.zeros((s.shape[0], dim, 1)),
        name=name, kernel=NormalKernel([0.0], [1.0]))


def identity_map(dim=1) -> TransitionMap:
    eye = np.eye(dim)
    return deterministic_map(lambda s: s.copy(), dim, "identity",
                             jac=lambda s: np.broadcast_to(eye, (s.shape[0], dim, dim)))


def _with(m: TransitionMap, **changes) -> TransitionMap:
    from dataclasses import replace

    return replace(m, **changes)


# ---------------------------------------------------------------- config

MODEL_KINDS = ("linear_gaussian", "ar1", "contraction", "log_growth")


def model_from_config(table: Mapping):
    """Build a zoo model from a ``[model]`` table.

    Returns a :class:`StateSpaceModel` for ``linear_gaussian`` and a
    :class:`TransitionMap` otherwise.
    """
    kind = table.get("kind")
    p = {k: v for k, v in table.items() if k != "kind"}
    try:
        if kind == "linear_gaussian":
            return zoo_linear_gaussian(p["a"], p["sigma_w"], p.get("c", 1.0), p.get("sigma_y", 1.0))
        if kind == "ar1":
            return zoo_ar1(p["a"], p.get("sigma", p.get("sigma_w", 1.0)))
        if kind == "contraction":
            return zoo_contraction(p["a"], p.get("shift", 0.0), p.get("sigma", 1.0))
        if kind == "log_growth":
            return zoo_log_growth(p["alpha"], p["beta"], p["sigma"])
    except KeyError as exc:
        raise BadParameter(f"model kind {kind!r} needs parameter {exc.args[0]!r}") from None
    raise BadParameter(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def model_to_toml(kind: str, **params) -> str:
    if kind not in MODEL_KINDS:
        raise BadParameter(f"unknown model kind {kind!r}")
    lines = ["[model]", f'kind = "{kind}"']
    lines += [f"{k} = {float(v)!r}" for k, v in params.items()]
    return "\n".join(lines) + "\n"


def write_path_csv(fh, path: Array) -> None:
    """Write ``step,s_0,...,s_{d-1}`` rows to an open text file."""
    path = np.asarray(path, dtype=float)
    d = path.shape[1]
    fh.write("step," + ",".join(f"s_{i}" for i in range(d)) + "\n")
    for k, row in enumerate(path):
        fh.write(f"{k}," + ",".join(repr(float(x)) for x in row) + "\n")
