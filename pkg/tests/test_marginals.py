import numpy as np
import pytest
from scipy import stats

from byup import marginals as M
from byup.marginals import Energy, MarginalModel, TWalk, ecdf_values, pseudo_observations


def test_ecdf_example():
    assert np.allclose(ecdf_values([3.0, 1.0, 2.0]), [3 / 4, 1 / 4, 2 / 4])


def test_ecdf_ties_average_rank():
    assert np.allclose(ecdf_values([1.0, 2.0, 2.0, 5.0]), [1 / 5, 2.5 / 5, 2.5 / 5, 4 / 5])


def test_ecdf_rank_invariance(rng):
    x = rng.normal(size=(50, 2))
    y = np.column_stack([np.exp(x[:, 0]), x[:, 1] ** 3 + 2])
    models = [MarginalModel.empirical(), MarginalModel.empirical()]
    assert np.array_equal(pseudo_observations(x, models)[0], pseudo_observations(y, models)[0])


def test_frozen_sample_ecdf():
    m = MarginalModel.empirical([1.0, 2.0, 3.0])
    u, _ = pseudo_observations(np.array([[2.0], [2.5], [0.0]]), [m])
    assert np.allclose(u[:, 0], [2 / 4, 2.5 / 4, 0.5 / 4])


def test_parametric_medians():
    g = MarginalModel.parametric("gaussian", [0.0, 1.0])
    ln = MarginalModel.parametric("lognormal", [0.0, 1.0])
    u, clamped = pseudo_observations(np.array([[0.0, 1.0]]), [g, ln])
    assert u[0, 0] == 0.5 and u[0, 1] == pytest.approx(0.5, abs=1e-15)
    assert clamped == 0


def test_clamping_flagged():
    g = MarginalModel.parametric("gaussian", [0.0, 1.0])
    u, clamped = pseudo_observations(np.array([[50.0], [-50.0]]), [g])
    assert clamped == 2
    assert u[0, 0] == 1 - M.U_CLAMP and u[1, 0] == M.U_CLAMP


@pytest.mark.parametrize("family,theta,x", [
    ("gaussian", [1.0, 2.0], 0.3),
    ("lognormal", [0.2, 0.7], 1.9),
    ("gamma", [2.5, 1.5], 3.1),
    ("beta", [2.0, 5.0], 0.35),
])
def test_family_matches_scipy(family, theta, x):
    ref = {
        "gaussian": stats.norm(theta[0], theta[1]),
        "lognormal": stats.lognorm(theta[1], scale=np.exp(theta[0])),
        "gamma": stats.gamma(theta[0], scale=theta[1]),
        "beta": stats.beta(theta[0], theta[1]),
    }[family]
    fam = M.FAMILIES[family]
    assert fam.logpdf(np.array([x]), np.array(theta))[0] == pytest.approx(ref.logpdf(x), rel=1e-12)
    assert fam.cdf(np.array([x]), np.array(theta))[0] == pytest.approx(ref.cdf(x), rel=1e-12)


def test_mixture_family():
    th = np.array([0.5, 0.0, 1.0, 3.0, 1.0])
    x = np.array([-1.0, 1.5, 4.0])
    fam = M.FAMILIES["gmix2"]
    dens = 0.5 * stats.norm.pdf(x) + 0.5 * stats.norm.pdf(x, 3, 1)
    assert np.allclose(np.exp(fam.logpdf(x, th)), dens, rtol=1e-12)
    assert fam.cdf(np.array([1.5]), th)[0] == pytest.approx(0.5, abs=1e-15)


def test_unsupported_theta():
    with pytest.raises(ValueError):
        MarginalModel.parametric("gaussian", [0.0, -1.0])
    with pytest.raises(ValueError):
        MarginalModel.parametric("cauchy", [0.0, 1.0])
    en = Energy(np.zeros((3, 2)), [MarginalModel.parametric("gaussian", [0, 1]),
                                   MarginalModel.parametric("gaussian", [0, 1])], lambda u: np.zeros(len(u)))
    assert en(np.array([0.0, -1.0, 0.0, 1.0])) == np.inf


def test_energy_independence_is_marginal_nll(rng):
    x = rng.normal(size=(20, 2))
    models = [MarginalModel.parametric("gaussian", [0, 1]), MarginalModel.parametric("gaussian", [0, 1])]
    theta = np.array([0.3, 1.2, -0.1, 0.8])
    e = M.energy(theta, x, models, lambda u: np.zeros(len(u)))
    ref = -(stats.norm.logpdf(x[:, 0], 0.3, 1.2).sum() + stats.norm.logpdf(x[:, 1], -0.1, 0.8).sum())
    assert e == pytest.approx(ref, rel=1e-13)


def test_energy_single_observation_by_hand():
    # x = (1, 2), N(0, 1) and N(1, 2) marginals, copula density 2 u1 u2 + ...
    x = np.array([[1.0, 2.0]])
    models = [MarginalModel.parametric("gaussian", [0, 1]), MarginalModel.parametric("gaussian", [0, 1])]
    copula = lambda u: np.log(1.0 + 0.5 * (1 - 2 * u[:, 0]) * (1 - 2 * u[:, 1]))  # FGM, a = 0.5
    u1, u2 = 0.8413447460685429, 0.6914624612740131
    lf1 = -0.5 * np.log(2 * np.pi) - 0.5
    lf2 = -0.5 * np.log(2 * np.pi) - np.log(2.0) - 0.125
    expected = -(lf1 + lf2 + np.log(1 + 0.5 * (1 - 2 * u1) * (1 - 2 * u2)))
    assert M.energy(np.array([0, 1, 1, 2.0]), x, models, copula) == pytest.approx(expected, abs=1e-13)


def test_energy_finite_difference(rng):
    x = rng.normal(size=(15, 2))
    models = [MarginalModel.parametric("gaussian", [0, 1]), MarginalModel.parametric("gaussian", [0, 1])]
    copula = lambda u: np.log(1.0 + 0.5 * (1 - 2 * u[:, 0]) * (1 - 2 * u[:, 1]))
    en = Energy(x, models, copula)
    th = np.array([0.1, 1.1, -0.2, 0.9])
    h = 1e-6
    for i in range(4):
        dt = np.zeros(4)
        dt[i] = h
        num = (en(th + dt) - en(th - dt)) / (2 * h)
        # component-wise: marginal term analytic, copula term by its own difference
        m_part = lambda t: -en.marginal_loglik(t).sum()
        c_part = lambda t: -copula(en.pseudo(t)).sum()
        parts = (m_part(th + dt) - m_part(th - dt) + c_part(th + dt) - c_part(th - dt)) / (2 * h)
        assert num == pytest.approx(parts, rel=1e-6, abs=1e-8)


def test_log_prior_enters_energy():
    x = np.array([[0.0]])
    lp = lambda th: -0.5 * th[0] ** 2
    m = [MarginalModel.parametric("gaussian", [0, 1], log_prior=lp), MarginalModel.empirical()]
    data = np.array([[0.0, 1.0]])
    e0 = M.energy(np.array([0.0, 1.0]), data, m, lambda u: np.zeros(len(u)))
    e1 = M.energy(np.array([2.0, 1.0]), data, m, lambda u: np.zeros(len(u)))
    assert e1 - e0 == pytest.approx(2.0 + 2.0, abs=1e-12)


def _std_normal_walk(seed=0):
    return TWalk(lambda t: 0.5 * float(t @ t), np.array([-1.0]), np.array([1.0]))


def test_twalk_gaussian_moments():
    walk = _std_normal_walk()
    rng = np.random.default_rng(314)
    xs = np.empty(100_000)
    for i in range(xs.size):
        walk.step(rng)
        xs[i] = walk.x[0]
    assert abs(xs.mean()) < 0.05
    assert 0.9 < xs.var() < 1.1


def test_twalk_rejects_outside_support():
    energy = lambda t: 0.0 if np.all(t > 0) else np.inf
    walk = TWalk(energy, np.array([1.0, 2.0]), np.array([2.0, 1.0]))
    # every candidate outside the support must be rejected
    rng = np.random.default_rng(5)
    for _ in range(2000):
        walk.step(rng)
        assert np.all(walk.x > 0) and np.all(walk.xp > 0)
    walk2 = TWalk(lambda t: 0.0 if t[0] < 10 else np.inf, np.array([1.0]), np.array([2.0]))
    walk2.energy = lambda t: np.inf
    x0 = walk2.x.copy()
    for _ in range(200):
        assert walk2.step(rng)[1] is False
    assert np.array_equal(walk2.x, x0)


def test_twalk_replay():
    a, b = _std_normal_walk(), _std_normal_walk()
    ra, rb = np.random.default_rng(9), np.random.default_rng(9)
    for _ in range(500):
        assert a.step(ra) == b.step(rb)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.xp, b.xp)


def test_twalk_construction_errors():
    with pytest.raises(ValueError):
        TWalk(lambda t: 0.0, np.array([1.0, 2.0]), np.array([1.0, 3.0]))
    with pytest.raises(ValueError):
        TWalk(lambda t: np.inf, np.array([1.0]), np.array([2.0]))
