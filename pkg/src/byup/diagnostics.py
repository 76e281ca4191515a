"""Chain diagnostics, model-comparison criteria and simulation truths."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, special, stats
from scipy.stats import qmc

from .bernstein import beta_kernels
from .centering import gaussian_copula_logpdf

log = logging.getLogger(__name__)


# -- perfect samples -------------------------------------------------------------------


def nearest_factorization(n: int) -> tuple[int, int]:
    """``(a1, a2)`` with ``a1 * a2 == n`` and ``a1`` the largest divisor <= sqrt(n)."""
    if n < 1:
        raise ValueError("sample size must be positive")
    a1 = int(np.floor(np.sqrt(n)))
    while n % a1:
        a1 -= 1
    return a1, n // a1


def _sym_sqrt(cov):
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0:
        raise ValueError("covariance matrix must be positive definite")
    return (vecs * np.sqrt(vals)) @ vecs.T


def perfect_sample_gaussian(mu, cov, a1: int, a2: int) -> np.ndarray:
    """Deterministic ``a1 * a2`` point set mimicking a bivariate Gaussian sample.

    Radii are chi(2) quantiles at probabilities ``(i - 0.5) / a1``; angles are
    ``a2`` equally spaced values on ``[0, 2 pi)``. Row ``i * a1 + j`` holds
    radius ``j`` at angle ``i``.
    """
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if mu.shape != (2,) or cov.shape != (2, 2):
        raise ValueError("perfect samples are defined for d = 2 only")
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance matrix must be symmetric")
    root = _sym_sqrt(cov)
    q = stats.chi.ppf((np.arange(1, a1 + 1) - 0.5) / a1, df=2)
    r = 2 * np.pi * np.arange(a2) / a2
    s = np.stack([np.outer(np.cos(r), q).ravel(), np.outer(np.sin(r), q).ravel()], axis=1)
    return mu + s @ root.T


@dataclass(frozen=True)
class GaussianMixture:
    """Bivariate Gaussian mixture; also the true joint model of a simulation."""

    weights: tuple
    means: tuple
    covs: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1) > 1e-12 or np.any(w <= 0):
            raise ValueError("mixture weights must be positive and sum to 1")
        for c in self.covs:
            _sym_sqrt(np.asarray(c, dtype=float))

    @property
    def d(self) -> int:
        return len(self.means[0])

    def allocation(self, n: int) -> list[int]:
        """Largest-remainder split of ``n`` points across components."""
        raw = np.asarray(self.weights) * n
        base = np.floor(raw).astype(int)
        order = np.argsort(-(raw - base), kind="stable")
        for i in order[: n - base.sum()]:
            base[i] += 1
        return [int(b) for b in base]

    def perfect_sample(self, n: int) -> np.ndarray:
        parts = []
        for nc, mu, cov in zip(self.allocation(n), self.means, self.covs):
            if nc:
                parts.append(perfect_sample_gaussian(mu, cov, *nearest_factorization(nc)))
        return np.concatenate(parts)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return sum(w * stats.multivariate_normal(m, c).pdf(x).reshape(-1)
                   for w, m, c in zip(self.weights, self.means, self.covs))

    def marginal_pdf(self, j: int, x) -> np.ndarray:
        return sum(w * stats.norm.pdf(x, m[j], np.sqrt(c[j][j]))
                   for w, m, c in zip(self.weights, self.means, self.covs))

    def marginal_cdf(self, j: int, x) -> np.ndarray:
        return sum(w * special.ndtr((np.asarray(x) - m[j]) / np.sqrt(c[j][j]))
                   for w, m, c in zip(self.weights, self.means, self.covs))

    def marginal_ppf(self, j: int, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        lo = min(m[j] - 40 * np.sqrt(c[j][j]) for m, c in zip(self.means, self.covs))
        hi = max(m[j] + 40 * np.sqrt(c[j][j]) for m, c in zip(self.means, self.covs))
        out = np.array([optimize.brentq(lambda t: self.marginal_cdf(j, t) - p, lo, hi, xtol=1e-14)
                        for p in u.ravel()])
        return out.reshape(u.shape)

    def copula_density(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if len(self.weights) == 1:
            c = np.asarray(self.covs[0], dtype=float)
            s = np.sqrt(np.diag(c))
            return np.exp(gaussian_copula_logpdf(u, c / np.outer(s, s)))
        x = np.stack([self.marginal_ppf(j, u[:, j]) for j in range(self.d)], axis=1)
        marg = np.prod([self.marginal_pdf(j, x[:, j]) for j in range(self.d)], axis=0)
        return self.pdf(x) / marg


_I = ((1.0, 0.0), (0.0, 1.0))

MODELS = {
    "M1": GaussianMixture((0.4, 0.6), ((-1.6, -1.6), (0.0, 0.0)),
                          (((1.0, 0.85), (0.85, 1.0)), ((1.0, -0.1), (-0.1, 1.0)))),
    "M2": GaussianMixture((1.0,), ((0.0, 0.0),), (((1.0, 0.5), (0.5, 1.0)),)),
    "M3": GaussianMixture((0.5, 0.5), ((0.0, 0.0), (0.0, 0.0)),
                          (((1.0, 0.5), (0.5, 1.0)), ((1.0, -0.9), (-0.9, 1.0)))),
    "M4": GaussianMixture((0.5, 0.5), ((-1.0, -1.0), (1.0, 1.0)), (_I, _I)),
}
"""Simulation models; M1 emulates N(0,1) marginals joined by a Clayton(3) copula."""

FOUR_D_CORRELATION = np.array([
    [1.0, 0.4, 0.6, 0.7],
    [0.4, 1.0, 0.7, 0.3],
    [0.6, 0.7, 1.0, 0.2],
    [0.7, 0.3, 0.2, 1.0],
])


def model(name: str) -> GaussianMixture:
    try:
        return MODELS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


# -- effective sample size ---------------------------------------------------------------


def autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.size
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(), n=m)
    return np.fft.irfft(f * np.conjugate(f), n=m)[:n] / n


def ess(x, return_flag: bool = False):
    """Effective sample size with Geyer's initial monotone sequence.

    A constant chain has ESS ``N`` and sets the degeneracy flag.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise ValueError("ESS needs at least 10 draws")
    if not np.all(np.isfinite(x)):
        raise ValueError("chain contains non-finite values")
    acov = autocovariance(x)
    if acov[0] <= 1e-300 * max(1.0, np.abs(x).max() ** 2) or np.ptp(x) == 0:
        return (float(n), True) if return_flag else float(n)
    rho = acov / acov[0]
    # pair sums Gamma_m = rho_{2m} + rho_{2m+1}, truncated at the first negative,
    # then forced to be nonincreasing
    npairs = (n - 1) // 2
    pairs = rho[0 : 2 * npairs : 2] + rho[1 : 2 * npairs : 2]
    neg = np.flatnonzero(pairs < 0)
    pairs = pairs[: neg[0]] if neg.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    value = float(min(n / max(tau, 1e-12), n))
    return (value, False) if return_flag else value


# -- WAIC ---------------------------------------------------------------------------------------


def waic(loglik, return_flag: bool = False):
    """WAIC = -2 (lppd - p_waic) from an (S draws x n observations) matrix.

    ``p_waic`` uses the sample variance (ddof=1); with one draw it is 0 and
    the flag is set.
    """
    ll = np.atleast_2d(np.asarray(loglik, dtype=float))
    if not np.all(np.isfinite(ll)):
        raise ValueError("log-likelihood matrix has non-finite entries")
    s = ll.shape[0]
    lppd = np.sum(special.logsumexp(ll, axis=0) - np.log(s))
    single = s < 2
    p = 0.0 if single else float(np.sum(np.var(ll, axis=0, ddof=1)))
    value = float(-2.0 * (lppd - p))
    return (value, single) if return_flag else value


class WAICAccumulator:
    """Streaming WAIC over draws; equals :func:`waic` on the stacked matrix."""

    def __init__(self, n: int):
        self.count = 0
        self.lse = np.full(n, -np.inf)
        self.mean = np.zeros(n)
        self.m2 = np.zeros(n)

    def update(self, row) -> None:
        row = np.asarray(row, dtype=float)
        self.count += 1
        self.lse = np.logaddexp(self.lse, row)
        delta = row - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (row - self.mean)

    def value(self) -> float:
        if self.count == 0:
            raise ValueError("no draws accumulated")
        lppd = np.sum(self.lse - np.log(self.count))
        p = 0.0 if self.count < 2 else float(np.sum(self.m2 / (self.count - 1)))
        return float(-2.0 * (lppd - p))


# -- Hellinger ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray
    weights: np.ndarray


def gauss_legendre(d: int = 2, nodes: int = 64) -> Quadrature:
    x, w = np.polynomial.legendre.leggauss(nodes)
    x, w = (x + 1) / 2, w / 2
    grids = np.meshgrid(*([x] * d), indexing="ij")
    wgrid = np.ones(())
    for _ in range(d):
        wgrid = np.multiply.outer(wgrid, w)
    return Quadrature(np.stack([g.ravel() for g in grids], axis=1), wgrid.ravel())


def qmc_rule(d: int, m: int = 16, seed: int = 7) -> Quadrature:
    pts = qmc.Sobol(d, scramble=True, seed=seed).random_base2(m)
    return Quadrature(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]))


def default_quadrature(d: int) -> Quadrature:
    return gauss_legendre(2, 64) if d == 2 else qmc_rule(d, 16)


def hellinger(f: Callable, g: Callable, quad: Optional[Quadrature] = None, d: int = 2) -> float:
    """sqrt(1 - int sqrt(f g)) over the unit cube, clipped to [0, 1]."""
    quad = quad or default_quadrature(d)
    return hellinger_values(f(quad.points), g(quad.points), quad.weights)


def hellinger_values(fv, gv, weights) -> float:
    """Hellinger distance from density values at quadrature nodes.

    The overlap is divided by the rule's own estimates of both masses, so
    mass the rule misses near the boundary cancels and ``H(f, f) = 0``.
    """
    fv = np.maximum(np.asarray(fv, dtype=float), 0.0)
    gv = np.maximum(np.asarray(gv, dtype=float), 0.0)
    mass = float(np.sum(weights * fv)) * float(np.sum(weights * gv))
    if mass <= 0:
        return 1.0
    bc = float(np.sum(weights * np.sqrt(fv * gv))) / np.sqrt(mass)
    return float(np.sqrt(min(max(1.0 - bc, 0.0), 1.0)))


class BernsteinEvaluator:
    """Bernstein densities of many cell-mass tensors at fixed points."""

    def __init__(self, k, points):
        self.k = tuple(k)
        self.points = np.atleast_2d(points)
        self.design = np.ones((self.points.shape[0], 1))
        for j, kj in enumerate(self.k):
            kern = beta_kernels(self.points[:, j], kj)
            self.design = (self.design[:, :, None] * kern[:, None, :]).reshape(self.points.shape[0], -1)

    def __call__(self, masses) -> np.ndarray:
        """``masses``: (cells,) or (draws, cells) flattened row-major."""
        return np.asarray(masses) @ self.design.T


# -- posterior mean density ------------------------------------------------------------


def posterior_mean_density(masses, k, points, marginals: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """Pointwise average of the Bernstein densities of the draws in ``masses``.

    Each row of ``masses`` is a flattened cell-mass tensor. Without
    ``marginals`` the points live on the copula scale. With ``marginals``, a
    list of ``(cdf, pdf)`` callables per axis, the points are in data space
    and the joint density ``c(F(x)) prod f_j(x_j)`` is returned.
    """
    masses = np.atleast_2d(np.asarray(masses, dtype=float))
    if masses.shape[0] == 0 or masses.size == 0:
        raise ValueError("empty chain")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if marginals is None:
        return BernsteinEvaluator(k, points)(masses.mean(axis=0))
    u = np.stack([cdf(points[:, j]) for j, (cdf, _) in enumerate(marginals)], axis=1)
    dens = BernsteinEvaluator(k, u)(masses.mean(axis=0))
    for j, (_, pdf) in enumerate(marginals):
        dens = dens * pdf(points[:, j])
    return dens


def density_table(points, values) -> str:
    """Plot-ready delimited table with one row per point."""
    points = np.atleast_2d(points)
    cols = [f"z{j + 1}" for j in range(points.shape[1])] + ["value"]
    rows = [",".join(cols)]
    for p, v in zip(points, values):
        rows.append(",".join(f"{x:.17g}" for x in (*p, v)))
    return "\n".join(rows) + "\n"
