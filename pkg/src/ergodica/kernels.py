"""Shock distributions with exact log-densities and tail bounds.

The set is deliberately closed: independent Normals, independent
LogNormals, and finite mixtures of diagonal Normals.  A user kernel
subclasses :class:`ShockKernel` and supplies ``sample``, ``logpdf`` and
``tail_mass`` itself.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, ndtr

from .errors import BadParameter

_LOG_2PI = np.log(2.0 * np.pi)


def _vec(x, name):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise BadParameter(f"{name} must be a vector")
    if not np.all(np.isfinite(arr)):
        raise BadParameter(f"{name} must be finite")
    return arr


class ShockKernel:
    """Base class: an i.i.d. shock law on R^dim."""

    dim: int

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def logpdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def tail_mass(self, radius: float) -> float:
        """Upper bound on P(||eps||_2 > radius)."""
        raise NotImplementedError

    def marginal(self, idx) -> "ShockKernel":
        raise NotImplementedError(f"{type(self).__name__} has no marginal")

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def _as_rows(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.dim != 1:
            x = x[None, :]
        return x.reshape(-1, self.dim)


class NormalKernel(ShockKernel):
    """Independent coordinates, ``eps_i ~ N(mean_i, std_i^2)``."""

    def __init__(self, mean, std):
        self.mean = _vec(mean, "mean")
        self.std = _vec(std, "std")
        if self.mean.shape != self.std.shape:
            raise BadParameter("mean and std must have the same length")
        if np.any(self.std <= 0):
            raise BadParameter("std must be > 0")
        self.dim = self.mean.size

    def sample(self, rng, n):
        return self.mean + self.std * rng.standard_normal((n, self.dim))

    def logpdf(self, x):
        z = (self._as_rows(x) - self.mean) / self.std
        return -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self.std)) - 0.5 * self.dim * _LOG_2PI

    def tail_mass(self, radius):
        if self.dim == 0:
            return 0.0
        r = radius / np.sqrt(self.dim)
        per = ndtr((self.mean - r) / self.std) + ndtr((-r - self.mean) / self.std)
        return float(min(1.0, per.sum()))

    def marginal(self, idx):
        idx = np.asarray(idx, dtype=int)
        return NormalKernel(self.mean[idx], self.std[idx])

    def __repr__(self):
        return f"NormalKernel(mean={self.mean.tolist()}, std={self.std.tolist()})"


class LogNormalKernel(ShockKernel):
    """Independent coordinates with ``log eps_i ~ N(mu_i, sigma_i^2)``."""

    def __init__(self, mu, sigma):
        self.mu = _vec(mu, "mu")
        self.sigma = _vec(sigma, "sigma")
        if self.mu.shape != self.sigma.shape:
            raise BadParameter("mu and sigma must have the same length")
        if np.any(self.sigma <= 0):
            raise BadParameter("sigma must be > 0")
        self.dim = self.mu.size

    def sample(self, rng, n):
        return np.exp(self.mu + self.sigma * rng.standard_normal((n, self.dim)))

    def logpdf(self, x):
        x = self._as_rows(x)
        out = np.full(x.shape[0], -np.inf)
        ok = np.all(x > 0, axis=1)
        lx = np.log(x[ok])
        z = (lx - self.mu) / self.sigma
        out[ok] = (-0.5 * np.sum(z * z, axis=1) - np.sum(lx, axis=1)
                   - np.sum(np.log(self.sigma)) - 0.5 * self.dim * _LOG_2PI)
        return out

    def tail_mass(self, radius):
        if self.dim == 0:
            return 0.0
        r = radius / np.sqrt(self.dim)
        if r <= 0:
            return 1.0
        per = ndtr((self.mu - np.log(r)) / self.sigma)
        return float(min(1.0, per.sum()))

    def marginal(self, idx):
        idx = np.asarray(idx, dtype=int)
        return LogNormalKernel(self.mu[idx], self.sigma[idx])

    def __repr__(self):
        return f"LogNormalKernel(mu={self.mu.tolist()}, sigma={self.sigma.tolist()})"


class MixtureKernel(ShockKernel):
    """Finite mixture of diagonal Normals.

    ``means`` and ``stds`` have shape (components, dim).
    """

    def __init__(self, weights, means, stds):
        self.weights = _vec(weights, "weights")
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.stds = np.atleast_2d(np.asarray(stds, dtype=float))
        k = self.weights.size
        if self.means.shape != self.stds.shape or self.means.shape[0] != k:
            raise BadParameter("means/stds must have shape (components, dim)")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise BadParameter("mixture weights must be nonnegative and sum to 1")
        if np.any(self.stds <= 0):
            raise BadParameter("stds must be > 0")
        self.dim = self.means.shape[1]
        self._cum = np.cumsum(self.weights)
        self._cum[-1] = 1.0

    def sample(self, rng, n):
        comp = np.searchsorted(self._cum, rng.random(n), side="right")
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + self.stds[comp] * z

    def logpdf(self, x):
        x = self._as_rows(x)
        z = (x[:, None, :] - self.means[None]) / self.stds[None]
        comp = (-0.5 * np.sum(z * z, axis=2) - np.sum(np.log(self.stds), axis=1)
                - 0.5 * self.dim * _LOG_2PI)
        with np.errstate(divide="ignore"):
            return logsumexp(comp + np.log(self.weights), axis=1)

    def tail_mass(self, radius):
        if self.dim == 0:
            return 0.0
        r = radius / np.sqrt(self.dim)
        per = ndtr((self.means - r) / self.stds) + ndtr((-r - self.means) / self.stds)
        return float(min(1.0, np.sum(self.weights * per.sum(axis=1))))

    def marginal(self, idx):
        idx = np.asarray(idx, dtype=int)
        return MixtureKernel(self.weights, self.means[:, idx], self.stds[:, idx])


class ProductKernel(ShockKernel):
    """Independent concatenation of kernels, in order."""

    def __init__(self, parts):
        self.parts = list(parts)
        self.dim = sum(p.dim for p in self.parts)
        self._splits = np.cumsum([p.dim for p in self.parts])[:-1]

    def sample(self, rng, n):
        if not self.parts:
            return np.empty((n, 0))
        return np.concatenate([p.sample(rng, n) for p in self.parts], axis=1)

    def logpdf(self, x):
        x = self._as_rows(x)
        out = np.zeros(x.shape[0])
        for p, block in zip(self.parts, np.split(x, self._splits, axis=1)):
            out += p.logpdf(block)
        return out

    def tail_mass(self, radius):
        # ||x|| > R forces some block to exceed R / sqrt(#blocks)
        if not self.parts:
            return 0.0
        r = radius / np.sqrt(len(self.parts))
        return float(min(1.0, sum(p.tail_mass(r) for p in self.parts)))


def tightness_radius(kernel: ShockKernel, mass: float, start: float = 1.0) -> float:
    """Smallest doubling radius whose tail bound is at most ``mass``."""
    if not 0 < mass < 1:
        raise BadParameter("mass must lie in (0, 1)")
    r = start
    for _ in range(200):
        if kernel.tail_mass(r) <= mass:
            return r
        r *= 2.0
    raise BadParameter("kernel tail does not vanish")
