"""Squared-L2 and CAR/ICAR priors on yett-uniform copulas."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .centering import Independence
from .yett import YettCopula

KINDS = ("l2", "car", "icar")


class PriorError(ValueError):
    pass


def facet_adjacency(k) -> sparse.csr_matrix:
    """Cells are neighbours iff their indices differ by one on exactly one axis."""
    k = tuple(k)
    n = int(np.prod(k))
    idx = np.arange(n).reshape(k)
    rows, cols = [], []
    for j in range(len(k)):
        a = np.take(idx, range(k[j] - 1), axis=j).ravel()
        b = np.take(idx, range(1, k[j]), axis=j).ravel()
        rows += [a, b]
        cols += [b, a]
    rows = np.concatenate(rows) if rows else np.array([], int)
    cols = np.concatenate(cols) if cols else np.array([], int)
    return sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))


@dataclass
class PriorSpec:
    kind: str = "icar"
    alpha: float = 1.0
    gamma: float = 0.99
    centering: object = field(default_factory=Independence)
    adjacency: Optional[sparse.spmatrix] = None

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in KINDS:
            raise PriorError(f"unknown prior kind {self.kind!r}")
        if not self.alpha > 0:
            raise PriorError("alpha must be positive")
        if self.kind == "car" and not 0 < self.gamma < 1:
            raise PriorError("CAR smoothing gamma must lie in (0, 1)")
        if self.kind == "icar":
            self.gamma = 1.0
        if self.adjacency is not None:
            a = sparse.csr_matrix(self.adjacency)
            if (a != a.T).nnz or np.any(a.diagonal() != 0):
                raise PriorError("adjacency must be symmetric with zero diagonal")
            self.adjacency = a

    def precision(self, k) -> sparse.csr_matrix:
        """``D_A - gamma A`` over cells in row-major order."""
        a = self.adjacency if self.adjacency is not None else facet_adjacency(k)
        if a.shape[0] != int(np.prod(k)):
            raise PriorError("adjacency size does not match the cell count")
        deg = np.asarray(a.sum(axis=1)).ravel()
        return (sparse.diags(deg) - self.gamma * a).tocsr()


def _diff(g: YettCopula, g0: YettCopula) -> np.ndarray:
    if g.k != g0.k:
        raise PriorError(f"degree mismatch {g.k} vs {g0.k}")
    return g.mass - g0.mass


def distance_l2(g: YettCopula, g0: YettCopula) -> float:
    v = _diff(g, g0)
    # lambda(B) = 1/K; sum_l lambda (m_l/lambda - m0_l/lambda)^2
    return float(v.size * np.sum(v * v))


def distance_car(g: YettCopula, g0: YettCopula, spec: PriorSpec) -> float:
    v = _diff(g, g0).ravel()
    q = spec.precision(g.k)
    return float(v @ (q @ v))


def distance(g: YettCopula, g0: YettCopula, spec: PriorSpec) -> float:
    if spec.kind == "l2":
        return distance_l2(g, g0)
    return distance_car(g, g0, spec)


def log_prior(g: YettCopula, spec: PriorSpec, g0: Optional[YettCopula] = None) -> float:
    """Unnormalized log prior ``-(alpha/2) D(g, g0)``.

    ``g0`` is the projected centering copula; computed from ``spec`` if omitted.
    """
    if g0 is None:
        g0 = spec.centering.project(g.k)
    return -0.5 * spec.alpha * distance(g, g0, spec)


class FastDistance:
    """Distance evaluator on raw mass arrays, specialised for facet adjacency.

    Used by the sampler inner loop; agrees with :func:`distance` up to rounding.
    """

    def __init__(self, spec: PriorSpec, k):
        self.kind = spec.kind
        self.gamma = spec.gamma
        self.k = tuple(k)
        self.general = None
        if spec.kind != "l2" and spec.adjacency is not None:
            self.general = spec.precision(k)
        elif spec.kind == "car":
            self.degree = np.asarray(facet_adjacency(k).sum(axis=1)).reshape(k)

    def __call__(self, v: np.ndarray) -> float:
        """Distance for the difference array ``v = mass - centering_mass``."""
        if self.kind == "l2":
            return float(v.size * np.sum(v * v))
        if self.general is not None:
            flat = v.ravel()
            return float(flat @ (self.general @ flat))
        if self.kind == "icar":
            return float(sum(np.sum(np.diff(v, axis=j) ** 2) for j in range(v.ndim)))
        cross = 0.0
        for j in range(v.ndim):
            lo = np.take(v, range(v.shape[j] - 1), axis=j)
            hi = np.take(v, range(1, v.shape[j]), axis=j)
            cross += np.sum(lo * hi)
        return float(np.sum(self.degree * v * v) - 2.0 * self.gamma * cross)
