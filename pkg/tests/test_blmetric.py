import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from ergodica import EmpiricalMeasure, TooManyAtoms, bl_distance
from ergodica.blmetric import LOWER_BOUND, OPTIMAL, all_pairs, dump_lp, max_violation, merge_signed


def highs_bl(mu, nu):
    """Independent oracle: the primal program handed to HiGHS."""
    atoms, c = merge_signed(mu, nu)
    n = atoms.shape[0]
    pairs = all_pairs(n)
    rows = []
    rhs = []
    for i, k in pairs:
        d = float(np.linalg.norm(atoms[i] - atoms[k]))
        for sgn in (1.0, -1.0):
            r = np.zeros(n)
            r[i], r[k] = sgn, -sgn
            rows.append(r)
            rhs.append(d)
    res = linprog(-c, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rhs else None,
                  bounds=(-1, 1), method="highs")
    return -res.fun


def pm(*x):
    return EmpiricalMeasure.point_mass(list(x))


def cloud(rng, n, d, scale=1.0, loc=0.0):
    w = rng.dirichlet(np.ones(n))
    return EmpiricalMeasure(loc + scale * rng.normal(size=(n, d)), w / w.sum())


# ----------------------------------------------------------- worked examples

def test_identical_measures():
    mu = EmpiricalMeasure([0.0, 1.0, 2.0])
    assert bl_distance(mu, mu).value == 0.0


def test_unit_shift_point_masses():
    assert bl_distance(pm(0.0), pm(1.0)).value == pytest.approx(1.0, abs=1e-12)


def test_far_point_masses_saturate():
    assert bl_distance(pm(0.0), pm(3.0)).value == pytest.approx(2.0, abs=1e-12)


def test_half_mass_moved():
    mu = EmpiricalMeasure([0.0, 1.0])
    assert bl_distance(mu, pm(0.0)).value == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("method", ["chain", "adjacent-lp", "full-lp"])
def test_examples_hold_for_every_1d_method(method):
    assert bl_distance(pm(0.0), pm(1.0), method=method).value == pytest.approx(1.0, abs=1e-10)
    assert bl_distance(pm(0.0), pm(3.0), method=method).value == pytest.approx(2.0, abs=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_point_masses_in_several_dimensions(d):
    rng = np.random.default_rng(d)
    for _ in range(5):
        x, y = rng.normal(scale=1.5, size=(2, d))
        got = bl_distance(pm(*x), pm(*y)).value
        assert got == pytest.approx(min(np.linalg.norm(x - y), 2.0), abs=1e-10)


# ----------------------------------------------------------- oracles

@pytest.mark.parametrize("seed", range(6))
def test_1d_methods_agree(seed):
    rng = np.random.default_rng(seed)
    mu, nu = cloud(rng, 60, 1), cloud(rng, 70, 1, loc=0.3)
    vals = [bl_distance(mu, nu, method=m).value for m in ("chain", "adjacent-lp", "full-lp")]
    assert max(vals) - min(vals) < 1e-9
    assert vals[0] == pytest.approx(highs_bl(mu, nu), abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_2d_full_lp_matches_highs(seed):
    rng = np.random.default_rng(100 + seed)
    mu, nu = cloud(rng, 25, 2), cloud(rng, 30, 2, loc=0.4)
    res = bl_distance(mu, nu, method="full-lp")
    assert res.solver_status == OPTIMAL
    assert res.value == pytest.approx(highs_bl(mu, nu), abs=1e-8)
    assert res.max_violation <= 1e-9


def test_witness_attains_value():
    rng = np.random.default_rng(7)
    mu, nu = cloud(rng, 40, 2), cloud(rng, 40, 2, loc=0.2)
    res = bl_distance(mu, nu)
    assert res.masses @ res.witness == pytest.approx(res.value, abs=1e-10)
    assert max_violation(res.atoms, res.witness) <= 1e-9


def test_knn_is_a_feasible_lower_bound():
    rng = np.random.default_rng(21)
    mu, nu = cloud(rng, 120, 2), cloud(rng, 120, 2, loc=0.3)
    full = bl_distance(mu, nu, method="full-lp")
    knn = bl_distance(mu, nu, method="knn-lp", knn=4)
    assert knn.solver_status == LOWER_BOUND
    assert knn.value <= full.value + 1e-9
    assert knn.upper >= full.value - 1e-9
    assert knn.max_violation <= 1e-9


def test_auto_switches_to_knn_above_pair_cap():
    rng = np.random.default_rng(5)
    mu, nu = cloud(rng, 30, 2), cloud(rng, 30, 2)
    assert bl_distance(mu, nu, pair_cap=20).method == "knn-lp"
    assert bl_distance(mu, nu).method == "full-lp"


def test_chain_has_no_size_cap():
    rng = np.random.default_rng(9)
    mu = EmpiricalMeasure(rng.normal(size=20000))
    nu = EmpiricalMeasure(rng.normal(size=20000) + 0.1)
    res = bl_distance(mu, nu)
    assert res.method == "chain" and 0.0 < res.value < 0.2


def test_lp_cap():
    rng = np.random.default_rng(1)
    mu, nu = cloud(rng, 30, 2), cloud(rng, 30, 2)
    with pytest.raises(TooManyAtoms):
        bl_distance(mu, nu, lp_cap=50)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        bl_distance(pm(0.0), pm(0.0, 0.0))


def test_dump_lp_format():
    buf = io.StringIO()
    dump_lp(buf, np.array([[0.0], [3.0]]), [0.5, -0.5], [[0, 1]])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "atoms 2 1"
    assert lines[3] == "weights 2"
    assert lines[6] == "constraints 1"
    assert lines[7] == "0 1 3.0"


# ----------------------------------------------------------- metric axioms

def _measures(d):
    atom = st.floats(-3, 3, allow_nan=False, allow_subnormal=False)
    return st.lists(st.tuples(*([atom] * d), st.floats(0.05, 1.0)), min_size=1, max_size=8)


def _to_measure(pts):
    x = np.array([p[:-1] for p in pts])
    w = np.array([p[-1] for p in pts])
    return EmpiricalMeasure(x, w / w.sum())


@settings(max_examples=60)
@given(st.sampled_from([1, 2]).flatmap(lambda d: st.tuples(_measures(d), _measures(d), _measures(d))))
def test_metric_axioms(triple):
    a, b, c = (_to_measure(t) for t in triple)
    ab = bl_distance(a, b).value
    ba = bl_distance(b, a).value
    bc = bl_distance(b, c).value
    ac = bl_distance(a, c).value
    assert 0.0 <= ab <= 2.0 + 1e-12
    assert ab == pytest.approx(ba, abs=1e-9)
    assert ac <= ab + bc + 1e-9
    assert bl_distance(a, a).value == 0.0


@settings(max_examples=40)
@given(_measures(1))
def test_duplicated_atoms_merge(pts):
    a = _to_measure(pts)
    doubled = EmpiricalMeasure(np.concatenate([a.atoms, a.atoms]), np.concatenate([a.weights, a.weights]) / 2)
    assert bl_distance(a, doubled).value <= 1e-12
