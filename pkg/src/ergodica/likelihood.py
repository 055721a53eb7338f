"""Likelihood of observations from a state-space system.

Shock naming: ``eps1`` is the transition shock not seen through the
measurement, ``eps2`` the transition shock that is, and ``eta`` the
measurement noise.  Given the previous state and ``eps1``, the pair
``(eta, eps2)`` is solved from ``y`` and its density is transformed to
a density of ``y`` by the change-of-variables Jacobian.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.special import logsumexp

from .dynsys import StateSpaceModel, _solve_step, _total_jacobian, as_state, solve_shocks
from .errors import (BadParameter, InconsistentData, NonFiniteState, NonStationaryInit, ParticleCollapse,
                     SingularJacobian, ZeroLikelihood)
from .measure import EmpiricalMeasure, estimate_invariant, systematic_resample
from .parallel import parallel_map
from .rng import as_stream

XI = 1e-300
DET_FLOOR = 1e-14
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------- data types

class ObservationSeries:
    """``T`` observations of dimension ``m``, stored as a (T, m) array."""

    def __init__(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 1:
            raise BadParameter("observations must form a nonempty (T, m) array")
        if not np.all(np.isfinite(y)):
            raise InconsistentData("observations contain non-finite values")
        self.y = y

    @property
    def T(self):
        return self.y.shape[0]

    @property
    def dim(self):
        return self.y.shape[1]

    def __len__(self):
        return self.T

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "t":
            raise BadParameter(f"{path}: expected a header starting with 't'")
        return cls(np.array([[float(v) for v in r[1:]] for r in rows[1:] if r], dtype=float))

    def to_csv(self, fh):
        fh.write("t," + ",".join(f"y_{i}" for i in range(self.dim)) + "\n")
        for t, row in enumerate(self.y, start=1):
            fh.write(f"{t}," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class LikelihoodEstimate:
    loglik: float
    per_step: np.ndarray
    std_err: float
    method: str  # "Kalman", "SMC" or "ChangeOfVariables"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"method": self.method, "loglik": self.loglik, "std_err": self.std_err,
                           "per_step": [float(v) for v in self.per_step], **self.extra},
                          indent=2, sort_keys=True)


@dataclass
class JacobianSpec:
    matrix: np.ndarray
    det_abs: float


def _as_series(y, model=None) -> ObservationSeries:
    y = y if isinstance(y, ObservationSeries) else ObservationSeries(y)
    if model is not None and y.dim != model.obs_dim:
        raise BadParameter(f"observations have dimension {y.dim}, model expects {model.obs_dim}")
    return y


# ---------------------------------------------------------------- change of variables

def jacobian_det(model: StateSpaceModel, v_t, w2_t, theta=None, *, s=None, s_prev=None, eps1=None,
                 one_sided: bool = False) -> JacobianSpec:
    """``|det [dy/d eta, dy/d eps2]|`` at one point.

    With ``s_prev`` and ``eps1`` the ``eps2`` block includes the effect
    through the new state; otherwise the state ``s`` is held fixed.
    ``one_sided`` switches to forward differences (for kinks).
    """
    k1, k2, q = model.partition
    eta = np.asarray(v_t, dtype=float).reshape(1, q)
    eps2 = np.asarray(w2_t, dtype=float).reshape(1, k2)
    if s_prev is not None:
        s_prev = as_state(s_prev, model.state_dim)[None, :]
        eps1 = np.asarray(eps1, dtype=float).reshape(1, k1)
        J = _total_jacobian(model, s_prev, eps1, eta, eps2, one_sided=one_sided)[0]
    else:
        s = np.zeros((1, model.state_dim)) if s is None else as_state(s, model.state_dim)[None, :]
        g = model.measurement
        J = np.concatenate([g.grad_eta(s, eta, eps2, one_sided), g.grad_eps2(s, eta, eps2, one_sided)],
                           axis=2)[0]
    det = abs(float(np.linalg.det(J))) if J.size else 1.0
    if det < DET_FLOOR:
        raise SingularJacobian(f"|det dy/d(eta, eps2)| = {det:.3e} is numerically zero")
    return JacobianSpec(J, det)


def _log_cov_density(model: StateSpaceModel, s_prev, eps1, y):
    """Row-wise ``log p(y | s_prev, eps1)`` and the implied new states."""
    k1, k2, q = model.partition
    eta, s, eps2 = _solve_step(model, s_prev, eps1, y)
    logp = model.noise_kernel.logpdf(eta) if q else np.zeros(s.shape[0])
    if k2:
        logp = logp + model.eps2_kernel.logpdf(eps2)
    g = model.measurement
    if not (g.additive_noise and k2 == 0):
        J = _total_jacobian(model, s_prev, eps1, eta, eps2, s=s)
        logp = logp - np.log(np.abs(np.linalg.det(J)))
    return logp, s


def conditional_density(model: StateSpaceModel, y_t, eps1_prefix, s0, y_prefix, theta=None,
                        xi: float = XI) -> float:
    """``p(y_t | eps1_1..t, s0, y_1..t-1)`` by solving the shocks.

    The density of ``(eta_t, eps2_t)`` is divided by ``|det dy/d(eta, eps2)|``,
    so that it integrates to one over ``y_t``.
    """
    k1 = model.partition[0]
    y_prefix = np.asarray(y_prefix, dtype=float).reshape(-1, model.obs_dim)
    ys = np.vstack([y_prefix, np.asarray(y_t, dtype=float).reshape(1, model.obs_dim)])
    eps1 = np.asarray(eps1_prefix, dtype=float).reshape(ys.shape[0], k1)
    _, states, _ = solve_shocks(model, eps1, s0, ys)
    s_prev = as_state(s0, model.state_dim)[None, :] if ys.shape[0] == 1 else states[-2:-1]
    logp, _ = _log_cov_density(model, s_prev, eps1[-1:], ys[-1])
    dens = float(np.exp(logp[0]))
    if not dens >= xi:
        raise ZeroLikelihood(f"conditional density {dens:.3e} is below the floor {xi:.1e}")
    return dens


# ---------------------------------------------------------------- Kalman oracle

def kalman_filter(A, b, Q, C, c0, R, y, m0, P0):
    """Prediction-error decomposition; ``(m0, P0)`` is the law of ``s_0``.

    Returns the per-step log densities ``log p(y_t | y_1..t-1)``.
    """
    A, Q, C, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, Q, C, R))
    b, c0 = np.atleast_1d(np.asarray(b, dtype=float)), np.atleast_1d(np.asarray(c0, dtype=float))
    m, P = np.atleast_1d(np.asarray(m0, dtype=float)).copy(), np.atleast_2d(np.asarray(P0, dtype=float)).copy()
    y = np.asarray(y, dtype=float).reshape(-1, C.shape[0])
    out = np.empty(y.shape[0])
    for t, yt in enumerate(y):
        m = A @ m + b
        P = A @ P @ A.T + Q
        S = C @ P @ C.T + R
        v = yt - C @ m - c0
        L = np.linalg.cholesky(S)
        z = np.linalg.solve(L, v)
        out[t] = -0.5 * (z @ z) - np.sum(np.log(np.diag(L))) - 0.5 * len(v) * _LOG_2PI
        K = np.linalg.solve(S, C @ P).T
        m = m + K @ v
        P = P - K @ S @ K.T
        P = 0.5 * (P + P.T)
    return out


def stationary_moments(A, b, Q):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
        raise NonStationaryInit("the state transition has an eigenvalue of modulus >= 1")
    m = np.linalg.solve(np.eye(A.shape[0]) - A, np.atleast_1d(np.asarray(b, dtype=float)))
    P = solve_discrete_lyapunov(A, np.atleast_2d(np.asarray(Q, dtype=float)))
    return m, P


def kalman_loglik(model: StateSpaceModel, y, theta=None) -> LikelihoodEstimate:
    """Exact log-likelihood of a linear-Gaussian model with ``s_0`` drawn
    from its stationary law."""
    lg = model.meta.get("linear_gaussian")
    if lg is None:
        raise BadParameter(f"model {model.name!r} is not declared linear-Gaussian")
    y = _as_series(y, model)
    m0, P0 = stationary_moments(lg["A"], lg["b"], lg["Q"])
    per = kalman_filter(lg["A"], lg["b"], lg["Q"], lg["C"], lg["c0"], lg["R"], y.y, m0, P0)
    return LikelihoodEstimate(float(per.sum()), per, 0.0, "Kalman")


# ---------------------------------------------------------------- particle filter

def _one_filter(model, y, n, init_atoms, stream, xi):
    """Bootstrap filter; returns per-step log mean weights."""
    k1 = model.partition[0]
    rng0 = stream.substream("init").generator()
    init = EmpiricalMeasure(init_atoms.atoms, init_atoms.weights, check=False)
    s = init.atoms[systematic_resample(init.weights, n, rng0.random())]
    eps1_kernel = model.eps1_kernel if k1 else None
    out = np.empty(y.T)
    for t in range(y.T):
        rng = stream.substream("t", t).generator()
        eps1 = eps1_kernel.sample(rng, n) if k1 else np.empty((n, 0))
        with np.errstate(all="ignore"):
            lw, s_new = _log_cov_density(model, s, eps1, y.y[t])
        lw = np.where(np.isfinite(lw), lw, -np.inf)
        if not np.all(np.isfinite(s_new[np.isfinite(lw)])):
            raise NonFiniteState(f"non-finite particle states at step {t + 1}", index=t + 1)
        top = lw.max()
        if not np.isfinite(top):
            raise ZeroLikelihood(f"every particle has zero density at step {t + 1}")
        lz = float(logsumexp(lw) - math.log(n))
        if lz < math.log(xi):
            raise ZeroLikelihood(f"step {t + 1}: likelihood {math.exp(lz):.3e} is below the floor {xi:.1e}")
        w = np.exp(lw - top)
        w /= w.sum()
        ess = 1.0 / float(w @ w)
        if ess < 2.0:
            raise ParticleCollapse(f"effective sample size {ess:.3g} < 2 at step {t + 1}")
        out[t] = lz
        s = s_new[systematic_resample(w, n, rng.random())]
    return out


def smc_loglik(model: StateSpaceModel, y, theta=None, n_particles: int = 10_000,
               invariant: Optional[EmpiricalMeasure] = None, stream=0, batches: int = 20,
               xi: float = XI) -> LikelihoodEstimate:
    """Bootstrap particle-filter log-likelihood.

    ``batches`` independent filters of ``n_particles`` each are run; the
    likelihood is the mean of their (unbiased) likelihood estimates and
    ``std_err`` is the delta-method standard error of its logarithm.
    Initial particles are resampled from ``invariant``.
    """
    if n_particles < 100:
        raise BadParameter("n_particles must be >= 100")
    if batches < 2:
        raise BadParameter("need at least two batches for a standard error")
    if invariant is None or len(invariant) < 1:
        raise BadParameter("an invariant-law cloud is required for the initial state")
    y = _as_series(y, model)
    stream = as_stream(stream)
    steps = np.stack([_one_filter(model, y, n_particles, invariant, stream.substream("batch", b), xi)
                      for b in range(batches)])
    cum = np.cumsum(steps, axis=1)
    log_mean = logsumexp(cum, axis=0) - math.log(batches)
    per = np.diff(np.concatenate([[0.0], log_mean]))
    total = cum[:, -1]
    rel = np.exp(total - log_mean[-1])
    se = float(rel.std(ddof=1) / math.sqrt(batches))
    return LikelihoodEstimate(float(log_mean[-1]), per, se, "SMC",
                              {"n_particles": n_particles, "batches": batches,
                               "batch_loglik": [float(v) for v in total]})


# ---------------------------------------------------------------- convergence sweep

LIKELIHOOD_COLUMNS = ("j", "loglik", "std_err", "gap", "dC1_phi", "dC1_g")


def likelihood_convergence_sweep(model: StateSpaceModel, phi_family, g_family, y, theta=None, j_list=(1,),
                                 n_particles: int = 2000, stream=0, *, invariant_particles: int = 20_000,
                                 burn_in: int = 200, batches: int = 20, compacts=None, mc_n: int = 500,
                                 grid_points: int = 11, reference: Optional[LikelihoodEstimate] = None,
                                 threads: int = 1) -> list[dict]:
    """Per ``j``: particle log-likelihood of ``(phi_j, g_j)`` against the exact one.

    Every ``j`` reuses the same invariant-law draws and filter draws.  The
    exact reference is the Kalman value for linear-Gaussian models and a
    particle estimate with the same draws otherwise.  For linear-Gaussian
    families each row also carries the Kalman value of the ``j``-th model
    under ``oracle_loglik``.
    """
    from .approx import ExhaustingCompacts, metric_dC1, realize_model
    from .kernels import ProductKernel

    j_list = list(j_list)
    if not j_list or any(b <= a for a, b in zip(j_list, j_list[1:])):
        raise BadParameter("j_list must be nonempty and ascending")
    y = _as_series(y, model)
    stream = as_stream(stream)
    phi, g = model.transition, model.measurement
    if compacts is None:
        compacts = ExhaustingCompacts.from_kernel((1.0, 2.0, 4.0), model.shock_kernel)
    s0 = np.zeros(model.state_dim) if phi.stationary is None else np.full(model.state_dim, phi.stationary.location())

    def invariant_of(m):
        return estimate_invariant(m.transition, m.shock_kernel, s0, burn_in, invariant_particles,
                                  stream=stream.substream("invariant"), mode="cloud", tol=None)

    def smc(m):
        return smc_loglik(m, y, theta, n_particles, invariant_of(m), stream.substream("smc"), batches)

    if reference is None:
        reference = kalman_loglik(model, y) if "linear_gaussian" in model.meta else smc(model)
    g_kernel = ProductKernel([model.noise_kernel, model.eps2_kernel])
    def point(j):
        mj = realize_model(model, phi_family, g_family, j)
        est = smc(mj)
        d_phi = metric_dC1(mj.transition, phi, model.shock_kernel, compacts, mc_n,
                           stream.substream("dC1", "phi"), grid_points).value
        d_g = metric_dC1(mj.measurement, g, g_kernel, compacts, mc_n,
                         stream.substream("dC1", "g"), grid_points).value
        row = {"j": j, "loglik": est.loglik, "std_err": est.std_err,
               "gap": abs(est.loglik - reference.loglik), "dC1_phi": d_phi, "dC1_g": d_g}
        if "linear_gaussian" in mj.meta:
            row["oracle_loglik"] = kalman_loglik(mj, y).loglik
        return row

    return parallel_map(point, j_list, threads)
