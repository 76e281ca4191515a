"""Bernstein copula density and CDF induced by a yett-uniform copula.

The density is the beta mixture ``sum_nu W_nu prod_j beta(z_j | nu_j, k_j - nu_j + 1)``
(1-based ``nu``); with 0-based cell index ``i`` the kernel is
``beta(z | i + 1, k - i)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .yett import YettCopula

log = logging.getLogger(__name__)

TINY = 1e-300


def log_beta_kernels(z, k: int) -> np.ndarray:
    """Log beta densities ``log beta(z | i+1, k-i)`` for ``i = 0..k-1``.

    Returns shape ``(len(z), k)``. At ``z`` in {0, 1} the limits are used,
    so only the extreme kernel is nonzero (equal to ``k``).
    """
    z = np.asarray(z, dtype=float).reshape(-1, 1)
    i = np.arange(k, dtype=float)
    log_norm = np.log(k) + special.gammaln(k) - special.gammaln(i + 1) - special.gammaln(k - i)
    return log_norm + special.xlogy(i, z) + special.xlog1py(k - 1 - i, -z)


def beta_kernels(z, k: int) -> np.ndarray:
    return np.exp(log_beta_kernels(z, k))


def binomial_kernels(z, k: int) -> np.ndarray:
    """Binomial weights ``C(k, v) z^v (1-z)^(k-v)`` for ``v = 0..k``."""
    z = np.asarray(z, dtype=float).reshape(-1, 1)
    v = np.arange(k + 1, dtype=float)
    logc = special.gammaln(k + 1) - special.gammaln(v + 1) - special.gammaln(k - v + 1)
    return np.exp(logc + special.xlogy(v, z) + special.xlog1py(k - v, -z))


def contract(tensor: np.ndarray, factors: list[np.ndarray]) -> np.ndarray:
    """``out[n] = sum_nu tensor[nu] prod_j factors[j][n, nu_j]``."""
    if tensor.ndim == 2:
        a, b = factors
        return np.einsum("na,na->n", a @ tensor, b)
    out = np.tensordot(factors[0], tensor, axes=([1], [0]))  # (n, k2, ..., kd)
    for f in factors[1:]:
        out = np.einsum("na...,na->n...", out, f)
    return out


def _points(z, d):
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(1, -1) if z.size == d else z.reshape(-1, d)
    if z.shape[1] != d:
        raise ValueError(f"points must have {d} coordinates")
    return z


@dataclass(frozen=True)
class BernsteinCopula:
    base: YettCopula

    @property
    def k(self):
        return self.base.k

    @property
    def d(self):
        return self.base.d

    def kernels(self, z) -> list[np.ndarray]:
        z = _points(z, self.d)
        return [beta_kernels(z[:, j], kj) for j, kj in enumerate(self.k)]

    def density(self, z) -> np.ndarray:
        z = _points(z, self.d)
        out = contract(self.base.mass, self.kernels(z))
        bad = out < TINY
        if np.any(bad):
            out[bad] = np.exp(self._log_density_exact(z[bad]))
        return np.maximum(out, 0.0)

    def log_density(self, z) -> np.ndarray:
        z = _points(z, self.d)
        dens = contract(self.base.mass, self.kernels(z))
        with np.errstate(divide="ignore"):
            out = np.log(np.maximum(dens, 0.0))
        bad = dens < TINY
        if np.any(bad):
            out[bad] = self._log_density_exact(z[bad])
        return out

    def _log_density_exact(self, z) -> np.ndarray:
        # log-sum-exp over all cells, for points where the plain sum underflows
        w = self.base.mass.reshape(-1)
        keep = w > 0
        with np.errstate(divide="ignore"):
            logw = np.log(w[keep])
        grids = np.meshgrid(*[np.arange(kj) for kj in self.k], indexing="ij")
        cells = [g.reshape(-1)[keep] for g in grids]
        terms = np.zeros((z.shape[0], logw.size)) + logw
        for j, kj in enumerate(self.k):
            terms += log_beta_kernels(z[:, j], kj)[:, cells[j]]
        return special.logsumexp(terms, axis=1)

    def cdf(self, z) -> np.ndarray:
        z = _points(z, self.d)
        cum = self.base.mass
        for j in range(self.d):
            cum = np.cumsum(cum, axis=j)
        # G at grid points v/k for v = 0..k: zero-pad the cumulative masses
        cum = np.pad(cum, [(1, 0)] * self.d)
        factors = [binomial_kernels(z[:, j], kj) for j, kj in enumerate(self.k)]
        return np.clip(contract(cum, factors), 0.0, 1.0)

    def marginal_density(self, axis: int, t) -> np.ndarray:
        other = tuple(a for a in range(self.d) if a != axis)
        collapsed = self.base.mass.sum(axis=other)
        return beta_kernels(t, self.k[axis]) @ collapsed

    def loglik(self, points) -> float:
        ll = self.log_density(points)
        if np.any(np.isneginf(ll)):
            log.warning("Bernstein density is exactly zero at %d point(s)", int(np.isneginf(ll).sum()))
            return -np.inf
        return float(ll.sum())

    def cell_masses(self) -> np.ndarray:
        """Probability the Bernstein copula assigns to each grid cell."""
        mats = [kernel_cell_matrix(kj) for kj in self.k]
        out = self.base.mass
        for j, a in enumerate(mats):
            out = np.moveaxis(np.tensordot(a, out, axes=([1], [j])), 0, j)
        return out


def density(c: YettCopula, z) -> np.ndarray:
    return BernsteinCopula(c).density(z)


def cdf(c: YettCopula, z) -> np.ndarray:
    return BernsteinCopula(c).cdf(z)


def loglik(c: YettCopula, points) -> float:
    return BernsteinCopula(c).loglik(points)


def kernel_cell_matrix(k: int) -> np.ndarray:
    """``A[a, i]`` = integral of kernel ``i`` over cell ``a`` on one axis."""
    edges = np.arange(k + 1) / k
    i = np.arange(k)
    cdf_vals = stats.beta.cdf(edges[:, None], i + 1, k - i)
    return np.diff(cdf_vals, axis=0)


def weights_from_cell_masses(masses: np.ndarray) -> YettCopula:
    """Invert :meth:`BernsteinCopula.cell_masses` (the map is a bijection)."""
    out = np.asarray(masses, dtype=float)
    for j, kj in enumerate(out.shape):
        inv = np.linalg.inv(kernel_cell_matrix(kj))
        out = np.moveaxis(np.tensordot(inv, out, axes=([1], [j])), 0, j)
    return YettCopula(out)
