"""Marginal models, the joint energy, and the t-walk sampler for their parameters."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special, stats

log = logging.getLogger(__name__)

U_CLAMP = 1e-12


# -- parametric families ----------------------------------------------------------


@dataclass(frozen=True)
class Family:
    name: str
    params: tuple
    in_support: Callable
    logpdf: Callable
    cdf: Callable
    init: Callable  # data column -> starting parameter vector


def _pos(*ix):
    return lambda th: all(th[i] > 0 for i in ix)


def _gmix_logpdf(x, th):
    w, m1, s1, m2, s2 = th
    return np.logaddexp(np.log(w) + stats.norm.logpdf(x, m1, s1), np.log1p(-w) + stats.norm.logpdf(x, m2, s2))


def _gmix_cdf(x, th):
    w, m1, s1, m2, s2 = th
    return w * special.ndtr((x - m1) / s1) + (1 - w) * special.ndtr((x - m2) / s2)


def _gmix_init(x):
    q1, q2 = np.quantile(x, [0.25, 0.75])
    s = max(np.std(x) / 2, 1e-3)
    return np.array([0.5, q1, s, q2, s])


def _lognorm_init(x):
    lx = np.log(x)
    return np.array([lx.mean(), max(lx.std(), 1e-3)])


def _gamma_init(x):
    m, v = x.mean(), max(x.var(), 1e-12)
    return np.array([m * m / v, v / m])


def _beta_init(x):
    m, v = x.mean(), max(x.var(), 1e-12)
    c = max(m * (1 - m) / v - 1, 1e-3)
    return np.array([m * c, (1 - m) * c])


FAMILIES = {
    "gaussian": Family(
        "gaussian", ("mu", "sigma"), _pos(1),
        lambda x, th: stats.norm.logpdf(x, th[0], th[1]),
        lambda x, th: special.ndtr((x - th[0]) / th[1]),
        lambda x: np.array([x.mean(), max(x.std(), 1e-3)]),
    ),
    "lognormal": Family(
        "lognormal", ("mu", "sigma"), _pos(1),
        lambda x, th: stats.lognorm.logpdf(x, th[1], scale=np.exp(th[0])),
        lambda x, th: stats.lognorm.cdf(x, th[1], scale=np.exp(th[0])),
        _lognorm_init,
    ),
    "gamma": Family(
        "gamma", ("shape", "scale"), _pos(0, 1),
        lambda x, th: stats.gamma.logpdf(x, th[0], scale=th[1]),
        lambda x, th: stats.gamma.cdf(x, th[0], scale=th[1]),
        _gamma_init,
    ),
    "beta": Family(
        "beta", ("a", "b"), _pos(0, 1),
        lambda x, th: stats.beta.logpdf(x, th[0], th[1]),
        lambda x, th: stats.beta.cdf(x, th[0], th[1]),
        _beta_init,
    ),
    "gmix2": Family(
        "gmix2", ("weight", "mu1", "sigma1", "mu2", "sigma2"),
        lambda th: 0 < th[0] < 1 and th[2] > 0 and th[4] > 0 and th[1] < th[3],
        _gmix_logpdf, _gmix_cdf, _gmix_init,
    ),
}


@dataclass
class MarginalModel:
    """Either a parametric family with parameters ``theta`` or a frozen ECDF.

    ``log_prior`` defaults to flat on the family's support.
    """

    kind: str = "empirical"
    family: Optional[str] = None
    theta: Optional[np.ndarray] = None
    log_prior: Optional[Callable] = None
    sample: Optional[np.ndarray] = None

    @classmethod
    def empirical(cls, values=None):
        s = None if values is None else np.sort(np.asarray(values, dtype=float))
        return cls("empirical", sample=s)

    @classmethod
    def parametric(cls, family: str, theta=None, log_prior=None):
        if family not in FAMILIES:
            raise ValueError(f"unknown marginal family {family!r}")
        th = None if theta is None else np.asarray(theta, dtype=float)
        if th is not None and not FAMILIES[family].in_support(th):
            raise ValueError(f"{family} parameters {th} outside the support")
        return cls("parametric", family, th, log_prior)

    @property
    def frozen(self) -> bool:
        return self.kind == "empirical"

    @property
    def fam(self) -> Family:
        return FAMILIES[self.family]

    def n_params(self) -> int:
        return 0 if self.frozen else len(self.fam.params)

    def supported(self, theta) -> bool:
        return self.frozen or bool(self.fam.in_support(theta))

    def prior(self, theta) -> float:
        return 0.0 if self.log_prior is None else float(self.log_prior(theta))


def ecdf_values(column) -> np.ndarray:
    """rank / (n + 1), ties receiving their average rank."""
    column = np.asarray(column, dtype=float)
    return stats.rankdata(column) / (column.size + 1)


def pseudo_observations(data, models: Sequence[MarginalModel], thetas=None):
    """Map data to the unit cube column by column.

    Returns ``(u, clamped)`` where ``clamped`` counts parametric CDF values
    pushed into ``[1e-12, 1 - 1e-12]``.
    """
    data = np.asarray(data, dtype=float)
    u = np.empty_like(data)
    clamped = 0
    for j, m in enumerate(models):
        if m.frozen:
            if m.sample is None:
                u[:, j] = ecdf_values(data[:, j])
            else:
                # frozen ECDF of a supplied sample, mid-rank for ties
                s = m.sample
                lo = np.searchsorted(s, data[:, j], side="left")
                hi = np.searchsorted(s, data[:, j], side="right")
                u[:, j] = (lo + hi + 1) / 2 / (s.size + 1)
        else:
            th = m.theta if thetas is None else thetas[j]
            col = m.fam.cdf(data[:, j], th)
            bad = (col < U_CLAMP) | (col > 1 - U_CLAMP)
            clamped += int(bad.sum())
            u[:, j] = np.clip(col, U_CLAMP, 1 - U_CLAMP)
    if clamped:
        log.warning("clamped %d pseudo-observation(s) away from 0/1", clamped)
    return u, clamped


# -- energy ----------------------------------------------------------------------------


@dataclass
class Energy:
    """Negative log posterior of the stacked marginal parameters given the copula.

    ``copula_loglik`` maps an ``(n, d)`` array of pseudo-observations to the
    per-observation log copula density.
    """

    data: np.ndarray
    models: list
    copula_loglik: Callable

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        sizes = [m.n_params() for m in self.models]
        self.slices = []
        start = 0
        for s in sizes:
            self.slices.append(slice(start, start + s))
            start += s
        self.dim = start

    def split(self, theta):
        return [theta[s] if m.n_params() else None for s, m in zip(self.slices, self.models)]

    def stack(self) -> np.ndarray:
        parts = [m.theta for m in self.models if not m.frozen]
        return np.concatenate(parts) if parts else np.zeros(0)

    def supported(self, theta) -> bool:
        return all(m.supported(th) for m, th in zip(self.models, self.split(theta)))

    def pseudo(self, theta):
        return pseudo_observations(self.data, self.models, self.split(theta))[0]

    def marginal_loglik(self, theta) -> np.ndarray:
        """Per-observation sum of marginal log densities (0 for frozen axes)."""
        out = np.zeros(self.data.shape[0])
        for j, (m, th) in enumerate(zip(self.models, self.split(theta))):
            if not m.frozen:
                out += m.fam.logpdf(self.data[:, j], th)
        return out

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not self.supported(theta):
            return np.inf
        lp = sum(m.prior(th) for m, th in zip(self.models, self.split(theta)) if not m.frozen)
        ll = self.marginal_loglik(theta).sum() + np.sum(self.copula_loglik(self.pseudo(theta)))
        value = -(ll + lp)
        return float(value) if np.isfinite(value) else np.inf


def energy(theta, data, models, copula_loglik) -> float:
    return Energy(data, list(models), copula_loglik)(theta)


# -- t-walk -------------------------------------------------------------------------------


@dataclass
class TWalkSettings:
    """Move probabilities (traverse, walk, blow, hop) and scale constants of the t-walk."""

    move_probs: tuple = (0.4918, 0.4918, 0.0082, 0.0082)
    a_walk: float = 1.5
    a_traverse: float = 6.0
    n1phi: float = 4.0


@dataclass
class TWalk:
    """Christen & Fox t-walk on the product space of two coupled points.

    ``energy(theta)`` is the negative log target and returns ``inf`` outside
    the support.
    """

    energy: Callable
    x: np.ndarray
    xp: np.ndarray
    settings: TWalkSettings = field(default_factory=TWalkSettings)

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float)
        self.xp = np.array(self.xp, dtype=float)
        if self.x.shape != self.xp.shape or self.x.ndim != 1:
            raise ValueError("t-walk points must be 1-d vectors of equal length")
        if np.any(self.x == self.xp):
            raise ValueError("t-walk starting points must differ in every coordinate")
        self.n = self.x.size
        self.pphi = min(self.n, self.settings.n1phi) / self.n
        self.u = self.energy(self.x)
        self.up = self.energy(self.xp)
        if not (np.isfinite(self.u) and np.isfinite(self.up)):
            raise ValueError("t-walk starting points must lie in the support")
        self.cum = np.cumsum(self.settings.move_probs)

    def refresh(self):
        """Re-evaluate both energies (after the target changed)."""
        self.u = self.energy(self.x)
        self.up = self.energy(self.xp)

    def _phi(self, rng):
        phi = rng.random(self.n) < self.pphi
        return phi

    def _beta(self, rng):
        a = self.settings.a_traverse
        if rng.random() < (a - 1) / (2 * a):
            return rng.random() ** (1 / (a + 1))
        return rng.random() ** (1 / (1 - a))

    def step(self, rng) -> tuple[int, bool]:
        """One transition. Returns (move index, accepted)."""
        ker = int(np.searchsorted(self.cum, rng.random() * self.cum[-1], side="right"))
        ker = min(ker, 3)
        move_x = rng.random() < 0.5
        # "mov" is the point being moved, "ref" the other one
        mov, ref = (self.x, self.xp) if move_x else (self.xp, self.x)
        phi = self._phi(rng)
        nphi = int(phi.sum())
        if nphi == 0:
            return ker, False
        y = mov.copy()
        log_extra = 0.0
        if ker == 0:  # traverse
            beta = self._beta(rng)
            y[phi] = ref[phi] + beta * (ref[phi] - mov[phi])
            log_extra = (nphi - 2) * np.log(beta)
        elif ker == 1:  # walk
            aw = self.settings.a_walk
            uu = rng.random(self.n)
            z = (aw / (1 + aw)) * (aw * uu**2 + 2 * uu - 1)
            y[phi] = mov[phi] + (mov[phi] - ref[phi]) * z[phi]
            if np.any(y == ref):
                return ker, False
        elif ker == 2:  # blow
            sigma = np.max(np.abs(ref[phi] - mov[phi]))
            y[phi] = ref[phi] + sigma * rng.standard_normal(self.n)[phi]
            log_extra = self._g_blow(y, mov, ref, phi) - self._g_blow(mov, y, ref, phi)
        else:  # hop
            sigma = np.max(np.abs(ref[phi] - mov[phi])) / 3
            y[phi] = mov[phi] + sigma * rng.standard_normal(self.n)[phi]
            log_extra = self._g_hop(y, mov, ref, phi) - self._g_hop(mov, y, ref, phi)
        uy = self.energy(y)
        if not np.isfinite(uy) or not np.isfinite(log_extra):
            return ker, False
        u_old = self.u if move_x else self.up
        log_a = u_old - uy + log_extra
        if log_a >= 0 or rng.random() < np.exp(log_a):
            if move_x:
                self.x, self.u = y, uy
            else:
                self.xp, self.up = y, uy
            return ker, True
        return ker, False

    @staticmethod
    def _g_blow(h, x, xp, phi):
        # -log density of drawing h around xp with scale max|xp - x|
        sigma = np.max(np.abs(xp[phi] - x[phi]))
        if sigma <= 0:
            return np.inf
        nphi = phi.sum()
        return nphi * np.log(sigma) + 0.5 * np.sum((h[phi] - xp[phi]) ** 2) / sigma**2

    @staticmethod
    def _g_hop(h, x, xp, phi):
        sigma = np.max(np.abs(xp[phi] - x[phi])) / 3
        if sigma <= 0:
            return np.inf
        nphi = phi.sum()
        return nphi * np.log(sigma) + 0.5 * np.sum((h[phi] - x[phi]) ** 2) / sigma**2


def twalk_step(walk: TWalk, rng) -> tuple[int, bool]:
    return walk.step(rng)
