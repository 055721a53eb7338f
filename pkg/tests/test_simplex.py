import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

from ergodica import simplex


def _random_lp(rng, m, n):
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0.1, 1.0, size=n)
    b = A @ x0
    c = rng.uniform(0.5, 2.0, size=n) + np.abs(A).sum(axis=0)  # keeps the problem bounded
    return c, A, b


@pytest.mark.parametrize("seed", range(8))
def test_matches_highs(seed):
    rng = np.random.default_rng(seed)
    c, A, b = _random_lp(rng, 5, 12)
    ours = simplex.solve(c, A, b)
    ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert ours.status == "optimal"
    assert ours.value == pytest.approx(ref.fun, rel=1e-9, abs=1e-9)
    assert np.allclose(A @ ours.x, b, atol=1e-8)
    assert ours.x.min() >= -1e-10
    # strong duality
    assert ours.duals @ b == pytest.approx(ours.value, rel=1e-9, abs=1e-9)


def test_sparse_input_agrees_with_dense():
    rng = np.random.default_rng(11)
    c, A, b = _random_lp(rng, 4, 9)
    dense = simplex.solve(c, A, b)
    sparse = simplex.solve(c, sp.csc_matrix(A), b)
    assert sparse.value == pytest.approx(dense.value, abs=1e-10)


def test_infeasible():
    # x1 + x2 = -1 with x >= 0
    res = simplex.solve(np.ones(2), np.array([[1.0, 1.0]]), np.array([-1.0]))
    assert res.status == "infeasible"


def test_unbounded():
    # min -x1 s.t. x1 - x2 = 0
    res = simplex.solve(np.array([-1.0, 0.0]), np.array([[1.0, -1.0]]), np.array([0.0]))
    assert res.status == "unbounded"


def test_iteration_cap_reported():
    rng = np.random.default_rng(3)
    c, A, b = _random_lp(rng, 6, 20)
    res = simplex.solve(c, A, b, max_iter=1)
    assert res.status == "iteration_cap"
