"""Yett-uniform copulas: cell-mass tensors on the regular grid with uniform marginals.

Cells are addressed with 0-based multi-indices; cell ``nu`` covers
``prod_j (nu_j / k_j, (nu_j + 1) / k_j]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

SUM_TOL = 1e-12
ZERO_CLAMP = 1e-15


class YettError(ValueError):
    """Invalid yett-uniform copula or operation arguments."""


def check_degree(k: Sequence[int]) -> tuple[int, ...]:
    k = tuple(int(x) for x in k)
    if len(k) < 2:
        raise YettError(f"degree needs at least 2 axes, got {k}")
    if any(x < 1 for x in k):
        raise YettError(f"every degree entry must be >= 1, got {k}")
    return k


@dataclass(frozen=True, eq=False)
class YettCopula:
    """Immutable yett-uniform copula of degree ``k``.

    ``mass`` is a read-only array of shape ``k`` holding the probability of
    every grid cell.
    """

    mass: np.ndarray

    def __post_init__(self):
        m = np.array(self.mass, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)
        check_degree(m.shape)
        validate_mass(m)

    @property
    def k(self) -> tuple[int, ...]:
        return self.mass.shape

    @property
    def d(self) -> int:
        return self.mass.ndim

    @property
    def n_cells(self) -> int:
        return self.mass.size

    def flat(self) -> np.ndarray:
        return self.mass.reshape(-1)

    def validate(self, tol: float = SUM_TOL) -> "YettCopula":
        validate_mass(self.mass, tol)
        return self

    def __eq__(self, other):
        if not isinstance(other, YettCopula):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.mass, other.mass)

    def __hash__(self):
        return hash((self.k, self.mass.tobytes()))

    def allclose(self, other: "YettCopula", atol: float = 1e-12) -> bool:
        return self.k == other.k and np.allclose(self.mass, other.mass, rtol=0, atol=atol)

    def to_text(self) -> str:
        return dumps(self)


def marginal_sums(mass: np.ndarray) -> list[np.ndarray]:
    axes = range(mass.ndim)
    return [mass.sum(axis=tuple(a for a in axes if a != j)) for j in axes]


def validate_mass(mass: np.ndarray, tol: float = SUM_TOL) -> None:
    """Raise :class:`YettError` unless ``mass`` is a yett-uniform copula."""
    if not np.all(np.isfinite(mass)):
        raise YettError("non-finite cell mass")
    if mass.min() < 0:
        raise YettError(f"negative cell mass {mass.min():.3e}")
    total = mass.sum()
    if abs(total - 1.0) > tol:
        raise YettError(f"total mass {total!r} differs from 1")
    for j, s in enumerate(marginal_sums(mass)):
        err = np.abs(s - 1.0 / mass.shape[j]).max()
        if err > tol:
            raise YettError(f"axis {j} marginal off by {err:.3e}")


def rescale_marginals(mass: np.ndarray) -> np.ndarray:
    """One multiplicative pass per axis pulling slice sums back to 1/k_j.

    Removes the rounding drift of moves that scale a state about a point;
    zero cells stay zero.
    """
    out = np.array(mass, dtype=float)
    for j in range(out.ndim):
        s = marginal_sums(out)[j]
        shape = [1] * out.ndim
        shape[j] = -1
        out *= ((1.0 / out.shape[j]) / s).reshape(shape)
    return out


def is_valid(mass: np.ndarray, tol: float = SUM_TOL) -> bool:
    try:
        validate_mass(np.asarray(mass), tol)
    except YettError:
        return False
    return True


def independence(k: Sequence[int]) -> YettCopula:
    k = check_degree(k)
    return YettCopula(np.full(k, 1.0 / np.prod(k)))


# -- rectangle exchanges ------------------------------------------------------


def _corner_cells(d, axes, anchors, a, b):
    i, j = axes
    if not 0 <= i < d or not 0 <= j < d or i == j:
        raise YettError(f"bad axis pair {axes}")
    if a[0] == a[1] or b[0] == b[1]:
        raise YettError("degenerate exchange: corner indices coincide")
    base = list(anchors) if anchors is not None else [0] * d
    if len(base) != d:
        raise YettError("anchors must give one index per axis")
    cells = []
    for al, bm in ((a[0], b[0]), (a[0], b[1]), (a[1], b[0]), (a[1], b[1])):
        p = list(base)
        p[i], p[j] = al, bm
        cells.append(tuple(p))
    return cells


def rectangle_exchange_bounds(c: YettCopula, axes, anchors, a, b) -> tuple[float, float]:
    """Feasible interval for the exchange amount on the rectangle ``a x b``.

    ``anchors`` fixes the index of every axis not in ``axes`` (entries on the
    exchanged axes are ignored).
    """
    m = c.mass
    c11, c12, c21, c22 = (m[p] for p in _corner_cells(c.d, axes, anchors, a, b))
    return max(-c12, -c21), min(c11, c22)


def apply_rectangle_exchange(c: YettCopula, axes, anchors, a, b, eps: float) -> YettCopula:
    lo, hi = rectangle_exchange_bounds(c, axes, anchors, a, b)
    if eps < lo - ZERO_CLAMP or eps > hi + ZERO_CLAMP:
        raise YettError(f"exchange amount {eps} outside [{lo}, {hi}]")
    m = np.array(c.mass)
    for p, sign in zip(_corner_cells(c.d, axes, anchors, a, b), (-1, 1, 1, -1)):
        v = m[p] + sign * eps
        m[p] = 0.0 if abs(v) < ZERO_CLAMP else v
    return YettCopula(m)


def random_rectangle(k: tuple[int, ...], rng: np.random.Generator):
    """Draw (axes, anchors, a, b) for a rectangle exchange.

    Axis pairs are uniform among axes with at least two cells, anchors
    uniform per remaining axis, and both corner pairs are ordered draws of
    two distinct indices.
    """
    eligible = [j for j, kj in enumerate(k) if kj >= 2]
    if len(eligible) < 2:
        raise YettError(f"no rectangle exchange possible for degree {k}")
    i, j = sorted(rng.choice(eligible, size=2, replace=False))
    anchors = [int(rng.integers(kj)) for kj in k]
    a = tuple(int(x) for x in rng.choice(k[i], size=2, replace=False))
    b = tuple(int(x) for x in rng.choice(k[j], size=2, replace=False))
    return (int(i), int(j)), anchors, a, b


# -- general grids ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridCopula:
    """Grid-uniform copula on an arbitrary orthogonal grid.

    ``cuts[j]`` is the increasing sequence of cell boundaries on axis ``j``
    (starting at 0 and ending at 1); ``mass`` has one entry per cell.
    """

    cuts: tuple
    mass: np.ndarray

    def __post_init__(self):
        cuts = tuple(tuple(Fraction(x) for x in cj) for cj in self.cuts)
        for cj in cuts:
            if cj[0] != 0 or cj[-1] != 1 or any(x >= y for x, y in zip(cj, cj[1:])):
                raise YettError(f"bad cut sequence {cj}")
        m = np.array(self.mass, dtype=float)
        if m.shape != tuple(len(cj) - 1 for cj in cuts):
            raise YettError("mass shape does not match the grid")
        m.setflags(write=False)
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "mass", m)

    @classmethod
    def from_yett(cls, c: YettCopula) -> "GridCopula":
        return cls(tuple(tuple(Fraction(i, kj) for i in range(kj + 1)) for kj in c.k), c.mass)

    def widths(self, axis: int) -> np.ndarray:
        cj = self.cuts[axis]
        return np.array([float(y - x) for x, y in zip(cj, cj[1:])])

    def cell_volumes(self) -> np.ndarray:
        vol = np.ones(())
        for j in range(self.mass.ndim):
            vol = np.multiply.outer(vol, self.widths(j))
        return vol

    def density(self, z) -> np.ndarray:
        """Piecewise-constant density at points ``z`` (shape ``(n, d)``)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        idx = []
        for j, cj in enumerate(self.cuts):
            edges = np.array([float(x) for x in cj])
            # cells are closed on the right; z=0 belongs to the first cell
            ij = np.searchsorted(edges, z[:, j], side="left") - 1
            idx.append(np.clip(ij, 0, len(edges) - 2))
        idx = tuple(idx)
        return self.mass[idx] / self.cell_volumes()[idx]


def grid_division(c, axis: int, new_cut) -> GridCopula:
    """Insert ``new_cut`` on ``axis``; split cells share mass by volume."""
    g = GridCopula.from_yett(c) if isinstance(c, YettCopula) else c
    cut = Fraction(new_cut).limit_denominator(10**12) if isinstance(new_cut, float) else Fraction(new_cut)
    cj = g.cuts[axis]
    if not 0 < cut < 1:
        raise YettError("new cut must lie strictly inside (0, 1)")
    if cut in cj:
        raise YettError(f"cut {cut} coincides with an existing boundary")
    pos = next(i for i, x in enumerate(cj) if x > cut)  # cell pos-1 is split
    lo, hi = cj[pos - 1], cj[pos]
    left = float((cut - lo) / (hi - lo))
    m = np.moveaxis(np.array(g.mass), axis, 0)
    split = m[pos - 1]
    new = np.concatenate([m[: pos - 1], (left * split)[None], ((1 - left) * split)[None], m[pos:]])
    new_cuts = list(g.cuts)
    new_cuts[axis] = cj[:pos] + (cut,) + cj[pos:]
    return GridCopula(tuple(new_cuts), np.moveaxis(new, 0, axis))


# -- text serialization -------------------------------------------------------


def dumps(c: YettCopula) -> str:
    header = " ".join(str(x) for x in (c.d, *c.k))
    body = "\n".join(f"{x:.17g}" for x in c.flat())
    return f"{header}\n{body}\n"


def loads(text: str) -> YettCopula:
    tokens = text.split()
    d = int(tokens[0])
    k = tuple(int(x) for x in tokens[1 : 1 + d])
    values = np.array([float(x) for x in tokens[1 + d :]])
    if values.size != np.prod(k):
        raise YettError(f"expected {np.prod(k)} masses, found {values.size}")
    return YettCopula(values.reshape(k))
