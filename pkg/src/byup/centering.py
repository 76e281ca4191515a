"""Centering copulas and their projection onto yett cell masses."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats
from scipy.stats import qmc

from .yett import YettCopula, check_degree, independence

QMC_SEED = 20240917
QMC_POINTS = 2**16
SINKHORN_ITERS = 2000


class CenteringError(ValueError):
    pass


def check_correlation(r, tol: float = 1e-10) -> np.ndarray:
    r = np.array(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 2:
        raise CenteringError("correlation matrix must be square with d >= 2")
    if not np.allclose(r, r.T, atol=tol, rtol=0):
        raise CenteringError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(r), 1.0, atol=tol, rtol=0):
        raise CenteringError("correlation matrix needs a unit diagonal")
    if least_eigenvalue(r) < -tol:
        raise CenteringError("correlation matrix is not positive semidefinite")
    return r


def least_eigenvalue(r) -> float:
    return float(np.linalg.eigvalsh(np.asarray(r, dtype=float))[0])


@dataclass(frozen=True)
class Independence:
    d: int = 2

    def project(self, k) -> YettCopula:
        return independence(k)

    def density(self, u) -> np.ndarray:
        return np.ones(np.atleast_2d(u).shape[0])


@dataclass(frozen=True, eq=False)
class Gaussian:
    r: np.ndarray
    n_qmc: int = QMC_POINTS

    def __post_init__(self):
        r = check_correlation(self.r)
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def d(self) -> int:
        return self.r.shape[0]

    def project(self, k) -> YettCopula:
        return project_to_yett(self, k)

    def log_density(self, u) -> np.ndarray:
        return gaussian_copula_logpdf(u, self.r)

    def density(self, u) -> np.ndarray:
        return np.exp(self.log_density(u))


def gaussian_copula_logpdf(u, r) -> np.ndarray:
    u = np.atleast_2d(np.asarray(u, dtype=float))
    z = special.ndtri(u)
    sign, logdet = np.linalg.slogdet(r)
    if sign <= 0:
        return np.full(u.shape[0], -np.inf)
    q = np.linalg.solve(r, z.T).T
    return -0.5 * logdet - 0.5 * np.einsum("ni,ni->n", z, q - z)


def project_to_yett(g0, k: Sequence[int]) -> YettCopula:
    """Cell probabilities of ``g0`` on the grid of degree ``k``."""
    k = check_degree(k)
    if isinstance(g0, Independence):
        return independence(k)
    if len(k) != g0.d:
        raise CenteringError("degree and centering copula dimensions differ")
    try:
        np.linalg.cholesky(g0.r)
    except np.linalg.LinAlgError as exc:
        raise CenteringError("correlation matrix is not positive definite") from exc
    if g0.d == 2:
        mass = _bivariate_cells(g0.r[0, 1], k)
    else:
        mass = _qmc_cells(g0.r, k, g0.n_qmc)
    return YettCopula(sinkhorn(mass))


def sinkhorn(mass: np.ndarray, iters: int = SINKHORN_ITERS, tol: float = 1e-15) -> np.ndarray:
    """Rescale axis slices until every axis marginal equals ``1/k_j``."""
    m = np.clip(np.array(mass, dtype=float), 0.0, None)
    shape = m.shape
    m = m.ravel() / m.sum()
    # slice label of every cell along each axis, and the matching indicator matrix
    labels = [lab.ravel() for lab in np.indices(shape)]
    onehot = [np.eye(n)[lab] for n, lab in zip(shape, labels)]
    targets = [1.0 / n for n in shape]
    for _ in range(iters):
        worst = 0.0
        for lab, e, target in zip(labels, onehot, targets):
            s = m @ e
            worst = max(worst, float(np.abs(s - target).max()))
            # an empty slice stays empty under any finite factor
            m *= (target / np.maximum(s, 1e-300))[lab]
        if worst < tol:
            break
    return m.reshape(shape)


def _bivariate_cells(rho: float, k) -> np.ndarray:
    h = special.ndtri(np.arange(k[0] + 1) / k[0])
    kk = special.ndtri(np.arange(k[1] + 1) / k[1])
    hh, kg = np.meshgrid(h, kk, indexing="ij")
    cdf = bvn_cdf(hh.ravel(), kg.ravel(), rho).reshape(hh.shape)
    return np.diff(np.diff(cdf, axis=0), axis=1)


@lru_cache(maxsize=8)
def _qmc_normals(d: int, n: int) -> np.ndarray:
    pts = qmc.Sobol(d, scramble=True, seed=QMC_SEED).random(n)
    return special.ndtri(pts)


def _qmc_cells(r, k, n) -> np.ndarray:
    # fixed point set: the projection is a deterministic function of r
    z = _qmc_normals(len(k), n) @ np.linalg.cholesky(r).T
    flat = np.zeros(n, dtype=np.intp)
    for j, kj in enumerate(k):
        flat *= kj
        for cut in special.ndtri(np.arange(1, kj) / kj):
            flat += z[:, j] > cut
    return np.bincount(flat, minlength=int(np.prod(k))).reshape(k) / n


# -- bivariate normal CDF (Genz's BVNU, Drezner-Wesolowsky style quadrature) ----

_GL = {
    3: (
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
        np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    ),
    6: (
        np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                  0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
        np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                  0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
    ),
    10: (
        np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                  0.1527533871307259]),
        np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                  0.07652652113349733]),
    ),
}


def _bvnu_finite(h, k, r):
    """P(X > h, Y > k) for finite h, k arrays and scalar correlation r."""
    ar = abs(r)
    w, x = _GL[3] if ar < 0.3 else _GL[6] if ar < 0.75 else _GL[10]
    w, x = w[:, None], x[:, None]
    h = h[None, :]
    k = k[None, :]
    hk = h * k
    if ar < 0.925:
        hs = (h * h + k * k) / 2
        asr = np.arcsin(r)
        bvn = 0.0
        for sgn in (-1.0, 1.0):
            sn = np.sin(asr * (1 + sgn * x) / 2)
            bvn = bvn + (w * np.exp((sn * hk - hs) / (1 - sn * sn))).sum(axis=0)
        bvn = bvn * asr / (4 * np.pi) + special.ndtr(-h[0]) * special.ndtr(-k[0])
        return bvn
    if r < 0:
        k = -k
        hk = -hk
    bvn = np.zeros(h.shape[1])
    if ar < 1:
        as_ = (1 - r) * (1 + r)
        a = np.sqrt(as_)
        bs = (h - k) ** 2
        c = (4 - hk) / 8
        d = (12 - hk) / 16
        asr = -(bs / as_ + hk) / 2
        term = a * np.exp(asr) * (1 - c * (bs - as_) * (1 - d * bs / 5) / 3 + c * d * as_ * as_ / 5)
        bvn = np.where(asr > -100, term, 0.0)[0]
        b = np.sqrt(bs)
        sp = np.sqrt(2 * np.pi) * special.ndtr(-b / a)
        corr = np.exp(-hk / 2) * sp * b * (1 - c * bs * (1 - d * bs / 5) / 3)
        bvn = bvn - np.where(hk > -100, corr, 0.0)[0]
        a = a / 2
        for sgn in (-1.0, 1.0):
            xs = (a + a * sgn * x) ** 2
            rs = np.sqrt(1 - xs)
            asr2 = -(bs / xs + hk) / 2
            sp2 = 1 + c * xs * (1 + d * xs)
            ep = np.exp(-hk * xs / (2 * (1 + rs) ** 2)) / rs
            contrib = np.where(asr2 > -100, a * w * np.exp(asr2) * (ep - sp2), 0.0)
            bvn = bvn + contrib.sum(axis=0)
        bvn = -bvn / (2 * np.pi)
    h, k = h[0], k[0]
    if r > 0:
        return bvn + special.ndtr(-np.maximum(h, k))
    lower = np.where(h < 0, special.ndtr(k) - special.ndtr(h), special.ndtr(-h) - special.ndtr(-k))
    return np.where(h >= k, -bvn, lower - bvn)


def bvn_cdf(h, k, rho: float) -> np.ndarray:
    """P(X <= h, Y <= k) for a standard bivariate normal with correlation ``rho``."""
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    shape = h.shape
    h, k = h.ravel(), k.ravel()
    out = np.empty(h.size)
    lo_inf = (h == -np.inf) | (k == -np.inf)
    h_inf = (h == np.inf) & ~lo_inf
    k_inf = (k == np.inf) & ~lo_inf
    out[lo_inf] = 0.0
    both = h_inf & k_inf
    out[both] = 1.0
    out[h_inf & ~both] = special.ndtr(k[h_inf & ~both])
    out[k_inf & ~both] = special.ndtr(h[k_inf & ~both])
    fin = ~(lo_inf | h_inf | k_inf)
    if np.any(fin):
        if abs(rho) >= 1:
            if rho > 0:
                out[fin] = special.ndtr(np.minimum(h[fin], k[fin]))
            else:
                out[fin] = np.maximum(special.ndtr(h[fin]) - special.ndtr(-k[fin]), 0.0)
        else:
            out[fin] = _bvnu_finite(-h[fin], -k[fin], rho)
    return np.clip(out, 0.0, 1.0).reshape(shape)
