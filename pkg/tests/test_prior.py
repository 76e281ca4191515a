import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from byup import prior
from byup.centering import Gaussian
from byup.prior import FastDistance, PriorError, PriorSpec
from byup.yett import YettCopula, independence

from conftest import random_copula


def pairwise_oracle(v, adj):
    """Sum over unordered neighbour pairs of squared differences."""
    a = adj.toarray()
    n = a.shape[0]
    return sum((v[i] - v[j]) ** 2 for i in range(n) for j in range(i + 1, n) if a[i, j])


def test_l2_examples():
    g0 = independence((2, 2))
    assert prior.distance_l2(g0, g0) == 0.0
    g = YettCopula(np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert prior.distance_l2(g, g0) == pytest.approx(1.0, abs=1e-15)
    assert prior.distance_l2(g, g0) == prior.distance_l2(g0, g)


def test_l2_matches_piecewise_integral(rng):
    g, h = random_copula((3, 4), rng), random_copula((3, 4), rng)
    lam = 1 / 12
    direct = np.sum(lam * (g.mass / lam - h.mass / lam) ** 2)
    assert prior.distance_l2(g, h) == pytest.approx(direct, rel=1e-12)


def test_degree_mismatch():
    with pytest.raises(PriorError):
        prior.distance_l2(independence((2, 2)), independence((2, 3)))


def test_facet_adjacency_structure():
    a = prior.facet_adjacency((3, 3)).toarray()
    assert (a == a.T).all() and np.all(np.diag(a) == 0)
    assert a.sum(axis=1).tolist() == [2, 3, 2, 3, 4, 3, 2, 3, 2]


def test_icar_examples(rng):
    spec = PriorSpec("icar", 1.0)
    g0 = independence((3, 3))
    assert prior.distance_car(g0, g0, spec) == 0.0
    g = random_copula((3, 3), rng)
    v = (g.mass - g0.mass).ravel()
    adj = prior.facet_adjacency((3, 3))
    assert prior.distance_car(g, g0, spec) == pytest.approx(pairwise_oracle(v, adj), abs=1e-12)
    # the ordered double sum over each cell's neighbours counts every pair twice
    a = adj.toarray()
    ordered = sum((v[i] - v[j]) ** 2 for i in range(9) for j in range(9) if a[i, j])
    assert ordered == pytest.approx(2 * prior.distance_car(g, g0, spec), abs=1e-12)
    q = spec.precision((3, 3))
    assert float((v + 0.37) @ (q @ (v + 0.37))) == pytest.approx(float(v @ (q @ v)), abs=1e-12)


def test_car_positive_definite(rng):
    q = PriorSpec("car", 1.0, gamma=0.9).precision((3, 4)).toarray()
    assert np.linalg.eigvalsh(q).min() > 0


def test_spec_validation():
    with pytest.raises(PriorError):
        PriorSpec("car", 1.0, gamma=1.0)
    with pytest.raises(PriorError):
        PriorSpec("icar", 0.0)
    with pytest.raises(PriorError):
        PriorSpec("l1", 1.0)
    assert PriorSpec("icar", 1.0, gamma=0.5).gamma == 1.0


def test_log_prior_examples(rng):
    spec = PriorSpec("icar", 3.0)
    g0 = independence((3, 4))
    assert prior.log_prior(g0, spec) == 0.0
    g, h = random_copula((3, 4), rng), random_copula((3, 4), rng)
    spec2 = PriorSpec("icar", 6.0)
    assert prior.log_prior(g, spec2) == pytest.approx(2 * prior.log_prior(g, spec), rel=1e-14)
    d1, d2 = prior.distance(g, g0, spec), prior.distance(h, g0, spec)
    assert prior.log_prior(g, spec) - prior.log_prior(h, spec) == pytest.approx(-1.5 * (d1 - d2), abs=1e-14)


def test_gaussian_centering_mode():
    spec = PriorSpec("l2", 5.0, centering=Gaussian(np.array([[1.0, 0.3], [0.3, 1.0]])))
    g0 = spec.centering.project((4, 4))
    assert prior.log_prior(g0, spec) == 0.0


def test_acceptance_ignores_normalizing_constant(rng):
    spec = PriorSpec("icar", 7.0)
    g, h = random_copula((3, 3), rng), random_copula((3, 3), rng)
    log_r = prior.log_prior(h, spec) - prior.log_prior(g, spec)
    c = 123.456
    assert (prior.log_prior(h, spec) + c) - (prior.log_prior(g, spec) + c) == pytest.approx(log_r, abs=1e-10)


@pytest.mark.parametrize("kind", ["l2", "car", "icar"])
@pytest.mark.parametrize("k", [(3, 4), (3, 3, 2)])
def test_fast_distance_agrees(kind, k, rng):
    spec = PriorSpec(kind, 1.0)
    g, g0 = random_copula(k, rng), independence(k)
    assert FastDistance(spec, k)(g.mass - g0.mass) == pytest.approx(prior.distance(g, g0, spec), abs=1e-14)


def test_custom_adjacency():
    adj = prior.facet_adjacency((2, 3))
    spec = PriorSpec("car", 1.0, gamma=0.5, adjacency=adj)
    g0 = independence((2, 3))
    g = YettCopula(np.array([[0.3, 1 / 6, 1 / 30], [1 / 30, 1 / 6, 0.3]]))
    assert FastDistance(spec, (2, 3))(g.mass - g0.mass) == pytest.approx(prior.distance(g, g0, spec), abs=1e-14)
    with pytest.raises(PriorError):
        PriorSpec("car", 1.0, adjacency=np.array([[0, 1], [0, 0]]))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["l2", "car", "icar"]), st.integers(0, 2**32 - 1))
def test_property_distance_nonnegative(kind, seed):
    rng = np.random.default_rng(seed)
    spec = PriorSpec(kind, 1.0)
    g = random_copula((3, 3), rng, steps=20)
    assert prior.distance(g, independence((3, 3)), spec) >= -1e-15
    assert prior.distance(g, g, spec) == 0.0
