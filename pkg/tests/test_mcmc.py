import numpy as np
import pytest
from scipy import integrate

from byup.bernstein import BernsteinCopula
from byup.centering import Gaussian, least_eigenvalue
from byup.marginals import ecdf_values
from byup.mcmc import RunConfig, Sampler, hit_and_run_direction, read_chain, run, run_gaussian_copula
from byup.prior import FastDistance, PriorSpec
from byup.proposals import ProposalKind
from byup.yett import YettCopula, is_valid

from conftest import random_copula

DATA = "tests/data/ames_price_area.csv"


def _u(rng, n=40):
    return rng.random((n, 2)) * 0.98 + 0.01


def test_zero_iterations(tmp_path):
    cfg = RunConfig(k=(3, 3), iterations=0)
    chain = run(_u(np.random.default_rng(0)), cfg, out_path=tmp_path / "c.txt")
    assert len(chain) == 0 and chain.summary["saved"] == 0
    assert len(read_chain(tmp_path / "c.txt")) == 0


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(iterations=10, burnin=10)
    with pytest.raises(ValueError):
        RunConfig(thin=0)
    with pytest.raises(ValueError):
        RunConfig(hr_scale=0.0)


def test_determinism(tmp_path, rng):
    u = _u(rng)
    cfg = RunConfig(k=(4, 4), iterations=300, burnin=50, thin=5, seed=42, proposal=ProposalKind("gre", u=2))
    run(u, cfg, out_path=tmp_path / "a.txt")
    run(u, cfg, out_path=tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


def test_saved_states_valid(tmp_path, rng):
    r = np.array([[1.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 1.0]])
    cfg = RunConfig(k=(3, 3, 3), iterations=200, thin=2, seed=3, proposal=ProposalKind("vertex", tau=5.0),
                    prior=PriorSpec("car", 5.0, gamma=0.5, centering=Gaussian(r, n_qmc=2**12)))
    chain = run(rng.random((30, 3)) * 0.98 + 0.01, cfg, out_path=tmp_path / "c.txt")
    back = read_chain(tmp_path / "c.txt")
    assert np.array_equal(back.masses, chain.masses)
    for g in back.states():
        assert is_valid(g.mass, 1e-12)
    for row in back.r:
        m = np.eye(3)
        m[np.triu_indices(3, 1)] = row
        m = m + np.triu(m, 1).T
        assert least_eigenvalue(m) > 0


def test_incremental_loglik_matches_recompute(rng):
    u = _u(rng, 60)
    for kind in ("ire", "gre", "vertex"):
        cfg = RunConfig(k=(4, 5) if kind != "vertex" else (4, 4), seed=1, proposal=ProposalKind(kind, u=2, tau=4.0),
                        prior=PriorSpec("icar", 3.0))
        s = Sampler(u, cfg)
        for _ in range(100):
            s.update_g()
            bc = BernsteinCopula(YettCopula(s.w.reshape(s.k)))
            assert s.loglik == pytest.approx(bc.loglik(u), abs=1e-9)


def test_cache_coherence_after_run(rng):
    u = _u(rng, 80)
    cfg = RunConfig(k=(5, 5), iterations=1000, seed=7, proposal=ProposalKind("ire", u=3),
                    prior=PriorSpec("car", 2.0, gamma=0.8), refresh_every=0)
    chain = run(u, cfg, waic=False)
    dl, dd = chain.sampler.cache_errors()
    assert dl < 1e-9 and dd < 1e-9


def test_rejected_step_is_bit_identical(rng):
    u = _u(rng, 50)
    cfg = RunConfig(k=(4, 4), seed=2, proposal=ProposalKind("ire", u=6), prior=PriorSpec("icar", 1e4))
    s = Sampler(u, cfg)
    seen = 0
    for _ in range(200):
        before = (s.w.copy(), s.dens.copy(), s.loglik, s.distance)
        if not s.update_g():
            seen += 1
            assert np.array_equal(s.w, before[0]) and np.array_equal(s.dens, before[1])
            assert s.loglik == before[2] and s.distance == before[3]
    assert seen > 0


def test_flat_target_ire_always_accepts():
    cfg = RunConfig(k=(3, 3), seed=4, proposal=ProposalKind("ire"), prior=PriorSpec("l2", 1e-12))
    s = Sampler(None, cfg)
    for _ in range(500):
        s.update_g()
    assert s.acceptance_rates()["g"] > 0.999


def test_hit_and_run_direction(rng):
    for d in (2, 3, 5):
        h = hit_and_run_direction(d, 0.3, rng)
        assert np.array_equal(h, h.T) and np.all(np.diag(h) == 0)
        assert np.linalg.norm(h) == pytest.approx(np.sqrt(2) * 0.3, rel=1e-12)


def _gaussian_sampler(rng, d=2, alpha=20.0):
    r = np.eye(d) * 0.6 + 0.4
    cfg = RunConfig(k=(3,) * d, seed=5, prior=PriorSpec("l2", alpha, centering=Gaussian(r, n_qmc=2**12)))
    return Sampler(rng.random((20, d)) * 0.98 + 0.01, cfg, g_init=random_copula((3,) * d, rng))


def test_update_r_zero_step_accepted(rng):
    s = _gaussian_sampler(rng)
    r0 = s.r.copy()
    for _ in range(20):
        assert s.update_r(delta=0.0)
        assert np.allclose(s.r, r0)


def test_update_r_acceptance_matches_direct_evaluation(rng):
    s = _gaussian_sampler(rng)
    state = s.rng.bit_generator.state
    w, r, a = s.w.copy(), s.r.copy(), s.alpha
    accepted = s.update_r(delta=0.05)
    # replay the same draws by hand
    s2 = np.random.Generator(np.random.PCG64())
    s2.bit_generator.state = state
    r_new = r + hit_and_run_direction(2, 0.05, s2)
    u_acc = s2.random()
    fd = FastDistance(PriorSpec("l2", a), (3, 3))
    g_old = Gaussian(r).project((3, 3)).flat()
    g_new = Gaussian(r_new).project((3, 3)).flat()
    d_old, d_new = fd((w - g_old).reshape(3, 3)), fd((w - g_new).reshape(3, 3))
    from byup.mcmc import _log_tn_mass
    xi, xi_new = least_eigenvalue(r), least_eigenvalue(r_new)
    log_r = 0.5 * a * (d_old - d_new) + _log_tn_mass(0.5, xi / np.sqrt(2)) - _log_tn_mass(0.5, xi_new / np.sqrt(2))
    assert accepted == (u_acc < np.exp(min(0.0, log_r)))
    if accepted:
        assert np.allclose(s.r, r_new) and s.distance == pytest.approx(d_new, abs=1e-12)


def test_update_r_requires_gaussian(rng):
    s = Sampler(_u(rng), RunConfig(k=(3, 3)))
    with pytest.raises(RuntimeError):
        s.update_r()


def test_truncated_chain_readable(tmp_path, rng):
    cfg = RunConfig(k=(3, 3), iterations=50, seed=1)
    run(_u(rng), cfg, out_path=tmp_path / "c.txt")
    text = (tmp_path / "c.txt").read_text()
    (tmp_path / "t.txt").write_text(text[: len(text) - 20])
    chain = read_chain(tmp_path / "t.txt")
    assert len(chain) == 49


def test_chain_format_errors(tmp_path):
    (tmp_path / "x.txt").write_text("iter,w0\n1,2\n")
    with pytest.raises(ValueError):
        read_chain(tmp_path / "x.txt")


def _posterior_cdf_2x2(u, alpha):
    """CDF of w00 under the k=(2,2) posterior with ICAR prior, by quadrature."""
    fd = FastDistance(PriorSpec("icar", alpha), (2, 2))

    def dens(t):
        w = np.array([[t, 0.5 - t], [0.5 - t, t]])
        return np.exp(BernsteinCopula(YettCopula(w)).loglik(u) - 0.5 * alpha * fd(w - 0.25))

    z = integrate.quad(dens, 0, 0.5)[0]
    return lambda t: integrate.quad(dens, 0, t)[0] / z


@pytest.mark.parametrize("kind", ["ire", "vertex"])
def test_detailed_balance_two_observations(kind):
    u = np.array([[0.2, 0.3], [0.7, 0.9]])
    cfg = RunConfig(k=(2, 2), seed=11, proposal=ProposalKind(kind, tau=6.0), prior=PriorSpec("icar", 10.0))
    s = Sampler(u, cfg)
    n = 100_000
    t = np.empty(n)
    for i in range(n):
        s.update_g()
        t[i] = s.w[0]
    cdf = _posterior_cdf_2x2(u, 10.0)
    grid = np.linspace(0.0, 0.5, 101)[1:-1]
    emp = np.searchsorted(np.sort(t), grid, side="right") / n
    ks = np.max(np.abs(emp - np.array([cdf(g) for g in grid])))
    assert ks < 0.02


@pytest.mark.slow
def test_real_data_acceptance_bracket():
    x = np.loadtxt(DATA, delimiter=",", skiprows=1)
    u = np.column_stack([ecdf_values(x[:, j]) for j in range(2)])
    cfg = RunConfig(k=(10, 10), iterations=102_000, burnin=2_000, thin=10, seed=1,
                    proposal=ProposalKind("ire", u=4), prior=PriorSpec("icar", 10.0))
    acc = run(u, cfg, waic=False).summary["acceptance"]["g"]
    assert 0.10 < acc < 0.40


def test_gaussian_baseline_recovers_correlation(rng):
    z = rng.multivariate_normal([0, 0], [[1, 0.6], [0.6, 1]], size=400)
    u = np.column_stack([ecdf_values(z[:, j]) for j in range(2)])
    chain = run_gaussian_copula(u, 3000, burnin=500, seed=1)
    assert chain.r[:, 0].mean() == pytest.approx(0.6, abs=0.06)
    assert np.isfinite(chain.summary["waic"])


def test_parametric_marginals_sampled(rng):
    from byup.marginals import MarginalModel
    x = rng.normal([1.0, -2.0], [2.0, 0.5], size=(150, 2))
    cfg = RunConfig(k=(3, 3), iterations=3000, burnin=1000, thin=5, seed=8, prior=PriorSpec("icar", 10.0))
    models = [MarginalModel.parametric("gaussian"), MarginalModel.parametric("gaussian")]
    chain = run(x, cfg, models=models)
    m = chain.theta.mean(axis=0)
    assert m[0] == pytest.approx(1.0, abs=0.4) and m[2] == pytest.approx(-2.0, abs=0.15)
    assert m[1] == pytest.approx(2.0, abs=0.4) and m[3] == pytest.approx(0.5, abs=0.1)
