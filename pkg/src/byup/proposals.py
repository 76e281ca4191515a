"""Proposal kernels for the copula block.

Three kernels move a yett-uniform copula inside its polytope:

* iterated rectangle exchanges (``ire``), symmetric;
* generalized rectangle exchanges (``gre``), symmetric;
* vertex-line moves (``vertex``), which slide along the line joining the
  current state and a random polytope vertex and need a Hastings correction.

Each kernel has an array-level step used by the sampler (returning a
:class:`Move` that also describes how the cell masses changed, so the
likelihood can be updated incrementally) and a value-level wrapper returning
a :class:`Proposal`.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd, log
from typing import NamedTuple, Optional

import numpy as np
from scipy import special

from .yett import YettCopula, YettError, ZERO_CLAMP, rescale_marginals

GRE_MAX_RETRIES = 100
LINE_SLACK = 1e-15
HASTINGS_RULES = ("exact", "naive")


@dataclass(frozen=True)
class ProposalKind:
    kind: str = "ire"
    u: int = 1
    tau: float = 1.0
    hastings: str = "exact"

    def __post_init__(self):
        if self.kind not in ("ire", "gre", "vertex"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if int(self.u) < 1:
            raise ValueError("u must be a positive integer")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.hastings not in HASTINGS_RULES:
            raise ValueError(f"hastings rule must be one of {HASTINGS_RULES}")


@dataclass(frozen=True)
class Proposal:
    candidate: YettCopula
    log_hastings: float = 0.0


class Move(NamedTuple):
    """Outcome of an array-level kernel step.

    ``touched`` lists flat cells whose mass changed (sparse moves); for
    vertex-line moves ``line = (eps, vertex_idx, vertex_val)`` instead, with
    ``new = eps * old + (1 - eps) * vertex``. ``ok`` is False when the
    kernel gave up (the sampler then counts a rejection).
    """

    mass: np.ndarray
    log_hastings: float = 0.0
    touched: Optional[np.ndarray] = None
    line: Optional[tuple] = None
    ok: bool = True


def _strides(k):
    return np.array([int(np.prod(k[j + 1:])) for j in range(len(k))], dtype=np.intp)


def _two_distinct(rng, n):
    a = int(rng.random() * n)
    b = int(rng.random() * (n - 1))
    return a, b + (b >= a)


class Geometry:
    """Per-degree constants shared by the kernel steps."""

    def __init__(self, k):
        self.k = tuple(int(x) for x in k)
        self.d = len(self.k)
        self.strides = _strides(self.k)
        self.eligible = [j for j, kj in enumerate(self.k) if kj >= 2]
        self.km = min(self.k)
        self.dim = int(np.prod(self.k)) - 1 - sum(kj - 1 for kj in self.k)
        self.equal = len(set(self.k)) == 1

    def flat(self, cells) -> np.ndarray:
        return np.asarray(cells, dtype=np.intp).reshape(-1, self.d) @ self.strides


# -- iterated rectangle exchanges --------------------------------------------------


def exchange_step(w: np.ndarray, geo: Geometry, rng) -> tuple:
    """One random rectangle exchange applied in place to the flat array ``w``."""
    k, st = geo.k, geo.strides
    if len(geo.eligible) < 2:
        raise YettError(f"no rectangle exchange possible for degree {k}")
    x, y = _two_distinct(rng, len(geo.eligible))
    i, j = sorted((geo.eligible[x], geo.eligible[y]))
    base = 0
    for l in range(geo.d):
        if l != i and l != j:
            base += int(rng.random() * k[l]) * st[l]
    a1, a2 = _two_distinct(rng, k[i])
    b1, b2 = _two_distinct(rng, k[j])
    p11 = base + a1 * st[i] + b1 * st[j]
    p12 = base + a1 * st[i] + b2 * st[j]
    p21 = base + a2 * st[i] + b1 * st[j]
    p22 = base + a2 * st[i] + b2 * st[j]
    lo = max(-w[p12], -w[p21])
    hi = min(w[p11], w[p22])
    eps = lo + (hi - lo) * rng.random()
    for p, s in ((p11, -eps), (p12, eps), (p21, eps), (p22, -eps)):
        v = w[p] + s
        w[p] = 0.0 if abs(v) < ZERO_CLAMP else v
    return p11, p12, p21, p22


def ire_step(w: np.ndarray, geo: Geometry, u: int, rng) -> Move:
    new = w.copy()
    touched = []
    for _ in range(u):
        touched.extend(exchange_step(new, geo, rng))
    return Move(new, 0.0, np.unique(np.array(touched, dtype=np.intp)))


def propose_ire(g: YettCopula, u: int, rng) -> Proposal:
    move = ire_step(g.flat().copy(), Geometry(g.k), int(u), rng)
    return Proposal(YettCopula(move.mass.reshape(g.k)), 0.0)


# -- generalized rectangle exchanges ---------------------------------------------


def gre_direction(geo: Geometry, z1_cells, z2_cells) -> tuple[np.ndarray, np.ndarray]:
    """Sparse ``Z1 - Z2``: (flat cells, values), each support cell weighing 1/km."""
    s1 = set(geo.flat(z1_cells).tolist())
    s2 = set(geo.flat(z2_cells).tolist())
    plus, minus = sorted(s1 - s2), sorted(s2 - s1)
    idx = np.array(plus + minus, dtype=np.intp)
    val = np.concatenate([np.full(len(plus), 1.0), np.full(len(minus), -1.0)]) / geo.km
    return idx, val


def line_bounds(w: np.ndarray, idx: np.ndarray, val: np.ndarray) -> tuple[float, float]:
    """Interval of ``eps`` keeping ``w + eps * direction`` nonnegative."""
    wi = w[idx]
    pos = val > 0
    lo = np.max(-wi[pos] / val[pos]) if np.any(pos) else -np.inf
    hi = np.min(wi[~pos] / -val[~pos]) if np.any(~pos) else np.inf
    return float(min(lo, 0.0)), float(max(hi, 0.0))


def gre_random_supports(geo: Geometry, rng):
    """Z1 support (random per-axis relabelling of the diagonal) and Z2 support
    (Z1's support indices permuted again within each axis), as cell arrays."""
    flat = _gre_flat_supports(geo, rng)
    if flat is None:
        return None
    f1, f2 = flat
    return (np.array(np.unravel_index(f1, geo.k)).T, np.array(np.unravel_index(f2, geo.k)).T)


def _gre_flat_supports(geo: Geometry, rng):
    km, st = geo.km, geo.strides.tolist()
    pi = [rng.permutation(kj)[:km].tolist() for kj in geo.k]
    f1 = [sum(pi[j][i] * st[j] for j in range(geo.d)) for i in range(km)]
    s1 = set(f1)
    for _ in range(GRE_MAX_RETRIES):
        rho = [rng.permutation(km).tolist() for _ in range(geo.d)]
        f2 = [sum(pi[j][rho[j][i]] * st[j] for j in range(geo.d)) for i in range(km)]
        if set(f2) != s1:
            return f1, f2
    return None


def gre_step(w: np.ndarray, geo: Geometry, u: int, rng) -> Move:
    new = w.copy()
    touched = []
    km = geo.km
    for _ in range(u):
        supports = _gre_flat_supports(geo, rng)
        if supports is None:
            return Move(w, 0.0, None, None, ok=False)
        s1, s2 = set(supports[0]), set(supports[1])
        plus, minus = sorted(s1 - s2), sorted(s2 - s1)
        # each support cell carries 1/km, so w + eps (Z1 - Z2) >= 0 iff
        # -km min(w[plus]) <= eps <= km min(w[minus])
        lo = -km * min(new[p] for p in plus)
        hi = km * min(new[m] for m in minus)
        step_ = (lo + (hi - lo) * rng.random()) / km
        for p in plus:
            v = new[p] + step_
            new[p] = 0.0 if abs(v) < ZERO_CLAMP else v
        for m in minus:
            v = new[m] - step_
            new[m] = 0.0 if abs(v) < ZERO_CLAMP else v
        touched.extend(plus)
        touched.extend(minus)
    return Move(new, 0.0, np.unique(np.array(touched, dtype=np.intp)))


def gre_bounds(g: YettCopula, z1_cells, z2_cells) -> tuple[float, float]:
    geo = Geometry(g.k)
    idx, val = gre_direction(geo, z1_cells, z2_cells)
    return line_bounds(g.flat(), idx, val)


def apply_gre(g: YettCopula, z1_cells, z2_cells, eps: float) -> YettCopula:
    """``g + eps (Z1 - Z2)`` for explicit supports (0-based cell indices)."""
    geo = Geometry(g.k)
    idx, val = gre_direction(geo, z1_cells, z2_cells)
    lo, hi = line_bounds(g.flat(), idx, val)
    if not lo - ZERO_CLAMP <= eps <= hi + ZERO_CLAMP:
        raise YettError(f"eps {eps} outside [{lo}, {hi}]")
    w = g.flat().copy()
    v = w[idx] + eps * val
    v[np.abs(v) < ZERO_CLAMP] = 0.0
    w[idx] = v
    return YettCopula(w.reshape(g.k))


def propose_gre(g: YettCopula, u: int, rng) -> Proposal:
    move = gre_step(g.flat().copy(), Geometry(g.k), int(u), rng)
    return Proposal(YettCopula(move.mass.reshape(g.k)), 0.0)


# -- vertices ------------------------------------------------------------------


def vertex_cells(geo: Geometry, rng) -> tuple[np.ndarray, np.ndarray]:
    """Random polytope vertex as sparse (flat cells, masses).

    Equal degrees: one permutation per axis after the first, mass 1/k on
    cells ``(i, s_2(i), ..., s_d(i))``. Unequal degrees (d = 2 only): the
    northwest-corner rule on shuffled rows and columns, which yields a
    vertex but not a uniformly distributed one.
    """
    k = geo.k
    if geo.equal:
        kk = k[0]
        cells = np.stack([np.arange(kk)] + [rng.permutation(kk) for _ in range(geo.d - 1)], axis=1)
        return geo.flat(cells), np.full(kk, 1.0 / kk)
    if geo.d != 2:
        raise YettError("vertex sampling with unequal degrees is only supported for d = 2")
    k1, k2 = k
    scale = k1 * k2 // gcd(k1, k2)
    rows, cols = rng.permutation(k1), rng.permutation(k2)
    rb = [scale // k1] * k1
    cb = [scale // k2] * k2
    out_idx, out_val = [], []
    r = c = 0
    while r < k1 and c < k2:
        amt = min(rb[r], cb[c])
        out_idx.append(rows[r] * k2 + cols[c])
        out_val.append(amt / scale)
        rb[r] -= amt
        cb[c] -= amt
        if rb[r] == 0:
            r += 1
        if cb[c] == 0:
            c += 1
    return np.array(out_idx, dtype=np.intp), np.array(out_val)


def sample_vertex(k, rng) -> YettCopula:
    geo = Geometry(k)
    idx, val = vertex_cells(geo, rng)
    w = np.zeros(int(np.prod(geo.k)))
    w[idx] = val
    return YettCopula(w.reshape(geo.k))


# -- vertex-line moves ------------------------------------------------------------


def vertex_line_max(w: np.ndarray, e: np.ndarray) -> float:
    """Largest ``eps`` with ``eps * w + (1 - eps) * e`` nonnegative (>= 1)."""
    gap = e - w
    dec = gap > LINE_SLACK
    if not np.any(dec):
        return np.inf
    return float(np.min(e[dec] / gap[dec]))


def _log_trunc_mass(lo: float, hi: float) -> float:
    return log(max(special.ndtr(hi) - special.ndtr(lo), 1e-300))


def vertex_line_log_hastings(eps: float, eps_max: float, tau: float, dim: int, rule: str = "exact") -> float:
    """log q(old | new) - log q(new | old) for a vertex-line move.

    ``naive`` normalises both directions around the current state only. ``exact`` accounts
    for the reverse move being parameterised from the new state (so the
    reverse draw is ``1/eps`` with bound ``eps_max/eps``) and for the
    ``eps**(dim-1)`` volume factor of lines through a fixed vertex.
    """
    s = np.sqrt(tau)
    fwd_norm = _log_trunc_mass(-s, s * (eps_max - 1.0))
    if rule == "naive":
        return fwd_norm - _log_trunc_mass(-eps * s, s * (eps_max - eps))
    back = 1.0 / eps
    log_fwd = -0.5 * tau * (eps - 1.0) ** 2 - fwd_norm
    log_back = -0.5 * tau * (back - 1.0) ** 2 - _log_trunc_mass(-s, s * (eps_max * back - 1.0))
    return log_back - log_fwd + (dim - 2) * log(eps)


def sample_line_eps(eps_max: float, tau: float, rng) -> float:
    """Normal(1, 1/sqrt(tau)) truncated to (0, eps_max), by inversion."""
    s = np.sqrt(tau)
    lo, hi = special.ndtr(-s), special.ndtr(s * (eps_max - 1.0))
    p = lo + (hi - lo) * rng.random()
    eps = 1.0 + special.ndtri(p) / s
    return float(min(max(eps, np.nextafter(0.0, 1.0)), eps_max))


def vertex_line_step(w: np.ndarray, geo: Geometry, tau: float, rng, rule: str = "exact") -> Move:
    idx, val = vertex_cells(geo, rng)
    e = np.zeros_like(w)
    e[idx] = val
    eps_max = vertex_line_max(w, e)
    if not np.isfinite(eps_max):
        # the state is the sampled vertex: the line degenerates to a point
        return Move(w, 0.0, None, None, ok=False)
    eps = sample_line_eps(eps_max, tau, rng)
    new = eps * w + (1.0 - eps) * e
    new[np.abs(new) < ZERO_CLAMP] = 0.0
    # scaling about the vertex multiplies rounding drift by eps; undo it
    new = rescale_marginals(np.maximum(new, 0.0).reshape(geo.k)).ravel()
    lh = vertex_line_log_hastings(eps, eps_max, tau, geo.dim, rule)
    return Move(new, lh, None, (eps, idx, val))


def vertex_line_candidate(g: YettCopula, e: YettCopula, eps: float) -> YettCopula:
    new = eps * g.mass + (1.0 - eps) * e.mass
    new[np.abs(new) < ZERO_CLAMP] = 0.0
    return YettCopula(new)


def propose_vertex_line(g: YettCopula, tau: float, rng, rule: str = "exact") -> Proposal:
    move = vertex_line_step(g.flat().copy(), Geometry(g.k), tau, rng, rule)
    return Proposal(YettCopula(move.mass.reshape(g.k)), move.log_hastings)


def step(w: np.ndarray, geo: Geometry, kind: ProposalKind, rng) -> Move:
    if kind.kind == "ire":
        return ire_step(w, geo, kind.u, rng)
    if kind.kind == "gre":
        return gre_step(w, geo, kind.u, rng)
    return vertex_line_step(w, geo, kind.tau, rng, kind.hastings)


def propose(g: YettCopula, kind: ProposalKind, rng) -> Proposal:
    move = step(g.flat().copy(), Geometry(g.k), kind, rng)
    if not move.ok:
        return Proposal(g, 0.0)
    return Proposal(YettCopula(move.mass.reshape(g.k)), move.log_hastings)
