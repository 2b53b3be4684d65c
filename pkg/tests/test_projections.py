import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ccfrontier.errors import ContractError, InfeasibleError
from ccfrontier.projections import (min_variance_on_simplex, project_box_halfspace,
                                    project_simplex, project_simplex_variance)
from oracles import box_halfspace_kkt, simplex_kkt, simplex_variance_kkt

vectors = arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e3, 1e3))


def random_variance_instance(rng, n):
    y = rng.normal(scale=2.0, size=n)
    s2 = rng.uniform(0.1, 2.0, n)
    q_min = min_variance_on_simplex(s2)[1]
    x0 = simplex_kkt(y)
    nu = rng.uniform(q_min, max(np.dot(s2, x0 * x0), 1.01 * q_min))
    return y, s2, nu


def random_box_instance(rng, n):
    y = rng.normal(scale=2.0, size=n)
    lo = rng.uniform(-1, 0, n)
    hi = lo + rng.uniform(0.1, 2.0, n)
    c = rng.normal(size=n)
    cmin, cmax = np.minimum(c * lo, c * hi).sum(), np.maximum(c * lo, c * hi).sum()
    return y, lo, hi, c, cmin + rng.uniform() * (cmax - cmin)


def test_simplex_examples():
    np.testing.assert_allclose(project_simplex(np.array([0.5, 0.5])), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex(np.array([0.6, 0.6, 0.6])), [1 / 3] * 3)
    np.testing.assert_allclose(project_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
    np.testing.assert_allclose(simplex_kkt(np.array([2.0, 0.0])), [1.0, 0.0])


@settings(max_examples=200)
@given(vectors)
def test_simplex_membership(y):
    x = project_simplex(y)
    assert abs(x.sum() - 1.0) <= 1e-12
    assert x.min() >= 0


def test_simplex_rejects_non_finite():
    with pytest.raises(ContractError):
        project_simplex(np.array([np.nan, 1.0]))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_oracle_equivalence_sample(n):
    rng = np.random.default_rng(n)
    for _ in range(30):
        y = rng.normal(scale=2.0, size=n)
        assert np.max(np.abs(project_simplex(y) - simplex_kkt(y))) <= 1e-8
        y, s2, nu = random_variance_instance(rng, n)
        assert np.max(np.abs(project_simplex_variance(y, s2, nu)
                             - simplex_variance_kkt(y, s2, nu))) <= 1e-8
        y, lo, hi, c, nu = random_box_instance(rng, n)
        assert np.max(np.abs(project_box_halfspace(y, lo, hi, c, nu)
                             - box_halfspace_kkt(y, lo, hi, c, nu))) <= 1e-8


def test_variance_cap_inactive_for_large_nu():
    rng = np.random.default_rng(3)
    y, s2 = rng.normal(size=6), rng.uniform(0.1, 1.0, 6)
    np.testing.assert_array_equal(project_simplex_variance(y, s2, s2.max()), project_simplex(y))


def test_variance_boundary_fixed_point():
    s = 0.3
    x = project_simplex_variance(np.array([0.5, 0.5]), np.array([s, s]), s / 2)
    np.testing.assert_allclose(x, [0.5, 0.5])


def test_variance_cap_met_tightly():
    rng = np.random.default_rng(4)
    for _ in range(50):
        y, s2, nu = random_variance_instance(rng, 8)
        x = project_simplex_variance(y, s2, nu)
        q = np.dot(s2, x * x)
        assert q <= nu + 1e-12
        if np.dot(s2, project_simplex(y) ** 2) > nu:
            assert q >= nu - 1e-10


def test_variance_infeasible_and_contract():
    s2 = np.array([1.0, 1.0])
    with pytest.raises(InfeasibleError):
        project_simplex_variance(np.array([1.0, 0.0]), s2, 0.4)
    with pytest.raises(ContractError):
        project_simplex_variance(np.array([1.0, 0.0]), np.array([1.0, 0.0]), 0.5)
    x = project_simplex_variance(np.array([1.0, 0.0]), s2, 0.5)
    np.testing.assert_allclose(x, [0.5, 0.5])


def test_box_examples():
    y = np.array([0.2, 0.3])
    np.testing.assert_array_equal(project_box_halfspace(y, 0.0, 1.0, 1.0, 1.0), y)
    np.testing.assert_allclose(project_box_halfspace(np.array([5.0]), 0.0, 10.0, 1.0, 1.0), [1.0])


def test_box_infeasible():
    with pytest.raises(InfeasibleError):
        project_box_halfspace(np.zeros(2), 0.0, 1.0, 1.0, -0.5)
    with pytest.raises(InfeasibleError):
        project_box_halfspace(np.zeros(2), np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1.0, 5.0)


def _projectors(rng, n):
    y, s2, nu_v = random_variance_instance(rng, n)
    _, lo, hi, c, nu_b = random_box_instance(rng, n)
    return [
        (project_simplex, lambda z: abs(z.sum() - 1) <= 1e-12 and z.min() >= 0,
         lambda: rng.dirichlet(np.ones(n))),
        (lambda v: project_simplex_variance(v, s2, nu_v),
         lambda z: np.dot(s2, z * z) <= nu_v + 1e-10 and z.min() >= 0,
         lambda: project_simplex_variance(rng.dirichlet(np.ones(n)), s2, nu_v)),
        (lambda v: project_box_halfspace(v, lo, hi, c, nu_b),
         lambda z: np.all(z >= lo) and np.all(z <= hi) and c @ z <= nu_b + 1e-12,
         lambda: project_box_halfspace(rng.uniform(lo, hi), lo, hi, c, nu_b)),
    ]


@pytest.mark.parametrize("variant", [0, 1, 2])
def test_projection_properties(variant):
    rng = np.random.default_rng(10 + variant)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        proj, member, feasible = _projectors(rng, n)[variant]
        y, w = rng.normal(scale=2, size=n), rng.normal(scale=2, size=n)
        x = proj(y)
        assert member(x)
        # idempotence and nonexpansiveness
        assert np.max(np.abs(proj(x) - x)) <= 1e-10
        assert np.linalg.norm(x - proj(w)) <= np.linalg.norm(y - w) + 1e-12
        # variational inequality against feasible points
        for _ in range(100):
            z = feasible()
            assert np.dot(y - x, z - x) <= 1e-8
