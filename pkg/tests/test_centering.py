import numpy as np
import pytest
from scipy import stats

from byup import centering
from byup.centering import CenteringError, Gaussian, Independence, least_eigenvalue, project_to_yett
from byup.diagnostics import FOUR_D_CORRELATION
from byup.yett import independence, is_valid


def test_independence_projection():
    assert np.array_equal(Independence(2).project((3, 5)).mass, independence((3, 5)).mass)


def test_gaussian_identity_projection():
    g = Gaussian(np.eye(2)).project((4, 4))
    assert np.allclose(g.mass, 1 / 16, atol=1e-9)


def test_orthant_probability():
    g = Gaussian(np.array([[1.0, 0.5], [0.5, 1.0]])).project((2, 2))
    assert g.mass[0, 0] == pytest.approx(0.25 + np.arcsin(0.5) / (2 * np.pi), abs=1e-12)
    assert g.mass[0, 0] == pytest.approx(1 / 3, abs=1e-12)


def test_bvn_cdf_matches_scipy(rng):
    for rho in (-0.9, -0.3, 0.0, 0.5, 0.95):
        mvn = stats.multivariate_normal([0, 0], [[1, rho], [rho, 1]])
        for h, k in rng.normal(size=(10, 2)):
            assert centering.bvn_cdf(h, k, rho) == pytest.approx(mvn.cdf([h, k]), abs=1e-7)


def test_bvn_cdf_exact_cases():
    assert centering.bvn_cdf(0.0, 0.0, 0.5) == pytest.approx(1 / 3, abs=1e-15)
    assert centering.bvn_cdf(0.7, -0.2, 0.0) == pytest.approx(stats.norm.cdf(0.7) * stats.norm.cdf(-0.2), abs=1e-15)


@pytest.mark.parametrize("k", [(3, 3), (5, 7)])
def test_projection_is_yett(k):
    g = Gaussian(np.array([[1.0, -0.6], [-0.6, 1.0]])).project(k)
    assert is_valid(g.mass, 1e-12)


def test_four_dim_projection_valid():
    g = Gaussian(FOUR_D_CORRELATION, n_qmc=2**14).project((3, 3, 3, 3))
    assert is_valid(g.mass, 1e-9)
    # compare a bivariate margin with the exact bivariate projection
    pair = g.mass.sum(axis=(2, 3))
    exact = Gaussian(FOUR_D_CORRELATION[:2, :2]).project((3, 3)).mass
    assert np.abs(pair - exact).max() < 5e-3


def test_projection_tends_to_independence():
    errs = []
    for rho in (0.1, 0.01, 0.001):
        g = Gaussian(np.array([[1.0, rho], [rho, 1.0]])).project((4, 4))
        errs.append(np.abs(g.mass - 1 / 16).max())
    assert errs[0] > errs[1] > errs[2] and errs[2] < 2e-4
    # first-order in rho
    assert errs[1] / errs[2] == pytest.approx(10, rel=0.05)


def test_least_eigenvalue_examples():
    assert least_eigenvalue(np.eye(3)) == pytest.approx(1.0)
    assert least_eigenvalue(np.array([[1.0, 0.5], [0.5, 1.0]])) == pytest.approx(0.5)
    # characteristic-polynomial oracle
    roots = np.roots(np.poly(FOUR_D_CORRELATION))
    assert least_eigenvalue(FOUR_D_CORRELATION) == pytest.approx(np.min(roots.real), abs=1e-10)


def test_invalid_correlation_rejected():
    with pytest.raises(CenteringError):
        Gaussian(np.array([[1.0, 1.2], [1.2, 1.0]]))
    with pytest.raises(CenteringError):
        Gaussian(np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(CenteringError):
        Gaussian(np.array([[2.0, 0.2], [0.2, 1.0]]))


def test_gaussian_copula_density_matches_scipy(rng):
    r = np.array([[1.0, 0.4], [0.4, 1.0]])
    u = rng.random((20, 2))
    z = stats.norm.ppf(u)
    ref = stats.multivariate_normal([0, 0], r).logpdf(z) - stats.norm.logpdf(z).sum(axis=1)
    assert np.allclose(centering.gaussian_copula_logpdf(u, r), ref, atol=1e-10)


def test_sinkhorn_restores_marginals(rng):
    m = rng.random((4, 5, 3))
    out = centering.sinkhorn(m)
    assert is_valid(out, 1e-12)
