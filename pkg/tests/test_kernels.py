import numpy as np
import pytest
from scipy import integrate, stats

from ergodica.errors import BadParameter
from ergodica.kernels import LogNormalKernel, MixtureKernel, NormalKernel, ProductKernel, tightness_radius


def test_normal_logpdf_matches_scipy():
    k = NormalKernel([0.5, -1.0], [2.0, 0.3])
    x = np.array([[0.1, -0.9], [3.0, 0.0]])
    ref = stats.norm(0.5, 2.0).logpdf(x[:, 0]) + stats.norm(-1.0, 0.3).logpdf(x[:, 1])
    assert np.allclose(k.logpdf(x), ref, atol=1e-12)


def test_lognormal_logpdf_matches_scipy():
    k = LogNormalKernel([0.0], [0.1])
    x = np.array([0.8, 1.0, 1.3])
    assert np.allclose(k.logpdf(x), stats.lognorm(0.1).logpdf(x), atol=1e-12)


def test_mixture_integrates_to_one():
    k = MixtureKernel([0.3, 0.7], [[-1.0], [2.0]], [[0.5], [1.0]])
    val, _ = integrate.quad(lambda x: float(k.pdf(np.array([x]))[0]), -20, 20)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_tail_mass_bounds_empirical_tail():
    rng = np.random.default_rng(0)
    for k in (NormalKernel([0.0, 0.0], [1.0, 2.0]), LogNormalKernel([0.0], [0.5]),
              MixtureKernel([0.5, 0.5], [[0.0], [3.0]], [[1.0], [1.0]]),
              ProductKernel([NormalKernel([0.0], [1.0]), LogNormalKernel([0.0], [0.3])])):
        x = k.sample(rng, 200_000)
        for r in (0.5, 1.0, 2.0, 4.0):
            emp = np.mean(np.linalg.norm(x, axis=1) > r)
            assert emp <= k.tail_mass(r) + 4 * np.sqrt(emp * (1 - emp) / len(x)) + 1e-12


def test_tail_mass_decreases():
    k = NormalKernel([0.0], [1.0])
    t = [k.tail_mass(r) for r in (1, 2, 3, 4)]
    assert all(b < a for a, b in zip(t, t[1:]))


def test_product_and_marginal():
    k = NormalKernel([0.0, 1.0, 2.0], [1.0, 2.0, 3.0])
    m = k.marginal([2])
    assert m.dim == 1 and m.mean[0] == 2.0 and m.std[0] == 3.0
    p = ProductKernel([NormalKernel([0.0], [1.0]), NormalKernel([1.0, 2.0], [2.0, 3.0])])
    assert p.dim == 3
    x = np.array([[0.3, 0.2, 0.1]])
    assert p.logpdf(x) == pytest.approx(k.logpdf(x))
    assert k.marginal([]).dim == 0


def test_bad_parameters():
    with pytest.raises(BadParameter):
        NormalKernel([0.0], [0.0])
    with pytest.raises(BadParameter):
        NormalKernel([0.0, 1.0], [1.0])
    with pytest.raises(BadParameter):
        tightness_radius(NormalKernel([0.0], [1.0]), 1.5)


def test_tightness_radius():
    k = NormalKernel([0.0], [1.0])
    r = tightness_radius(k, 1e-3)
    assert k.tail_mass(r) <= 1e-3 and k.tail_mass(r / 2) > 1e-3
