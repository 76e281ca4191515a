"""Metropolis-within-Gibbs sampler for the Bernstein yett-uniform copula model.

Each sweep updates the copula weights (``g_subsweeps`` kernel proposals),
then the Gaussian centering correlation matrix (metropolized hit-and-run,
only when the centering copula is Gaussian), then the marginal parameters
(one t-walk step, only when some marginal is parametric).
"""
from __future__ import annotations

import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from math import log, sqrt
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import proposals
from .bernstein import beta_kernels, contract
from .centering import Gaussian, Independence, least_eigenvalue, gaussian_copula_logpdf
from .diagnostics import WAICAccumulator
from .marginals import Energy, MarginalModel, TWalk, TWalkSettings, pseudo_observations
from .prior import FastDistance, PriorSpec
from .proposals import Geometry, ProposalKind
from .yett import YettCopula, check_degree

log_ = logging.getLogger(__name__)

CHAIN_FORMAT = "byup-chain"
CHAIN_VERSION = 1
DESIGN_LIMIT = 20_000_000


@dataclass
class RunConfig:
    k: tuple = (5, 5)
    iterations: int = 1000
    burnin: int = 0
    thin: int = 1
    seed: int = 0
    proposal: ProposalKind = field(default_factory=ProposalKind)
    prior: PriorSpec = field(default_factory=PriorSpec)
    hr_scale: float = 0.5
    g_subsweeps: int = 1
    refresh_every: int = 1000
    twalk: TWalkSettings = field(default_factory=TWalkSettings)

    def __post_init__(self):
        self.k = check_degree(self.k)
        if min(self.iterations, self.burnin) < 0 or self.thin < 1:
            raise ValueError("iterations and burnin must be >= 0 and thin >= 1")
        if self.iterations and self.burnin >= self.iterations:
            raise ValueError("burnin must be smaller than iterations")
        if not self.hr_scale > 0 or self.g_subsweeps < 1:
            raise ValueError("hr_scale must be positive and g_subsweeps >= 1")

    def echo(self) -> dict:
        p, q = self.proposal, self.prior
        out = {
            "k": list(self.k), "iterations": self.iterations, "burnin": self.burnin,
            "thin": self.thin, "seed": self.seed, "hr_scale": self.hr_scale,
            "g_subsweeps": self.g_subsweeps,
            "proposal": {"kind": p.kind, "u": p.u, "tau": p.tau, "hastings": p.hastings},
            "prior": {"kind": q.kind, "alpha": q.alpha, "gamma": q.gamma,
                      "centering": "gaussian" if isinstance(q.centering, Gaussian) else "independence"},
        }
        if isinstance(q.centering, Gaussian):
            out["prior"]["r"] = q.centering.r.tolist()
        return out

    def n_saved(self) -> int:
        return len(range(self.burnin, self.iterations, self.thin)) if self.iterations else 0


@dataclass
class ChainState:
    g: YettCopula
    r: Optional[np.ndarray]
    theta: Optional[np.ndarray]
    loglik: float
    distance: float


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def truncated_normal(scale: float, bound: float, rng) -> float:
    """N(0, scale^2) truncated to (-bound, bound), by inversion."""
    lo = special.ndtr(-bound / scale)
    p = lo + (1.0 - 2.0 * lo) * rng.random()
    return float(np.clip(scale * special.ndtri(p), -bound, bound))


def _log_tn_mass(scale: float, bound: float) -> float:
    return log(max(1.0 - 2.0 * special.ndtr(-bound / scale), 1e-300))


def hit_and_run_direction(d: int, delta: float, rng) -> np.ndarray:
    """Symmetric zero-diagonal perturbation with Frobenius norm sqrt(2)|delta|."""
    z = rng.standard_normal(d * (d - 1) // 2)
    h = np.zeros((d, d))
    iu = np.triu_indices(d, 1)
    h[iu] = delta * z / np.linalg.norm(z)
    return h + h.T


class Sampler:
    """Holds the chain state and the caches that make updates incremental.

    ``data`` is either already on the copula scale (when every marginal is
    frozen and ``models`` is None) or raw data transformed by ``models``.
    """

    def __init__(self, data, config: RunConfig, models: Optional[Sequence[MarginalModel]] = None,
                 g_init: Optional[YettCopula] = None, rng=None):
        self.config = config
        self.k = config.k
        self.d = len(self.k)
        self.geo = Geometry(self.k)
        self.rng = rng if rng is not None else make_rng(config.seed)
        data = np.zeros((0, self.d)) if data is None else np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != self.d:
            raise ValueError(f"data must be an (n, {self.d}) array")
        self.data = data
        self.n = data.shape[0]
        self.models = list(models) if models is not None else [MarginalModel.empirical() for _ in range(self.d)]
        if len(self.models) != self.d:
            raise ValueError("need one marginal model per axis")
        for j, m in enumerate(self.models):
            if not m.frozen and m.theta is None:
                self.models[j] = MarginalModel.parametric(m.family, m.fam.init(data[:, j]), m.log_prior)
        self.active_marginals = any(not m.frozen for m in self.models)
        if models is None:
            if self.n and (data.min() <= 0 or data.max() >= 1):
                raise ValueError("pseudo-observations must lie in (0, 1)")
            self.u = data
        else:
            self.u, _ = pseudo_observations(data, self.models)

        centering = config.prior.centering
        self.gaussian = isinstance(centering, Gaussian)
        if self.gaussian and centering.d != self.d:
            raise ValueError("centering dimension does not match the data")
        self.r = np.array(centering.r) if self.gaussian else None
        self.alpha = config.prior.alpha
        self.fast_distance = FastDistance(config.prior, self.k)
        self.g0 = centering.project(self.k).flat().copy()

        start = g_init if g_init is not None else YettCopula(self.g0.reshape(self.k))
        if start.k != self.k:
            raise ValueError("initial copula has the wrong degree")
        self.w = start.flat().copy()
        self.cells = np.unravel_index(np.arange(self.w.size), self.k)
        self._build_kernels()
        self.distance = self.fast_distance((self.w - self.g0).reshape(self.k))

        self.walk = None
        if self.active_marginals:
            self.energy = Energy(self.data, self.models, self._copula_loglik_at)
            x0 = self.energy.stack()
            jitter = 1e-3 * (np.abs(x0) + 1e-2) * (1 + self.rng.random(x0.size))
            self.walk = TWalk(self.energy, x0, x0 + jitter, config.twalk)
        self.accepted = {"g": 0, "r": 0, "marginals": 0}
        self.proposed = {"g": 0, "r": 0, "marginals": 0}

    # -- caches ------------------------------------------------------------------

    def _build_kernels(self):
        self.kern = [beta_kernels(self.u[:, j], kj) for j, kj in enumerate(self.k)]
        self.design_t = None
        if self.n and self.n * self.w.size <= DESIGN_LIMIT:
            cols = np.ones((self.w.size, self.n))
            for j in range(self.d):
                cols *= self.kern[j].T[self.cells[j]]
            self.design_t = cols
        self.dens = self._full_density(self.w)
        self.loglik = self._sum_log(self.dens)

    def _full_density(self, w):
        if not self.n:
            return np.zeros(0)
        if self.design_t is not None:
            return w @ self.design_t
        return contract(w.reshape(self.k), self.kern)

    def _columns(self, idx):
        if self.design_t is not None:
            return self.design_t[idx]
        cols = np.ones((len(idx), self.n))
        for j in range(self.d):
            cols *= self.kern[j].T[self.cells[j][idx]]
        return cols

    @staticmethod
    def _sum_log(dens) -> float:
        if dens.size == 0:
            return 0.0
        if dens.min() <= 0:
            return -np.inf
        return float(np.sum(np.log(dens)))

    def _copula_loglik_at(self, u):
        kern = [beta_kernels(u[:, j], kj) for j, kj in enumerate(self.k)]
        dens = contract(self.w.reshape(self.k), kern)
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(dens, 0.0))

    def pointwise_loglik(self) -> np.ndarray:
        """Per-observation log density (copula part plus parametric marginals)."""
        with np.errstate(divide="ignore"):
            out = np.log(np.maximum(self.dens, 0.0))
        if self.active_marginals:
            out = out + self.energy.marginal_loglik(self.walk.x)
        return out

    def log_prior(self) -> float:
        return -0.5 * self.alpha * self.distance

    # -- blocks ------------------------------------------------------------------------

    def update_g(self) -> bool:
        self.proposed["g"] += 1
        move = proposals.step(self.w, self.geo, self.config.proposal, self.rng)
        if not move.ok:
            self.rng.random()
            return False
        new = move.mass
        if self.n:
            if move.line is not None:
                eps, idx, val = move.line
                dens = eps * self.dens + (1.0 - eps) * (val @ self._columns(idx))
            else:
                idx = move.touched
                dens = self.dens + (new[idx] - self.w[idx]) @ self._columns(idx)
            ll = self._sum_log(dens)
        else:
            dens, ll = self.dens, 0.0
        dist = self.fast_distance((new - self.g0).reshape(self.k))
        log_r = (ll - self.loglik) - 0.5 * self.alpha * (dist - self.distance) + move.log_hastings
        if self.rng.random() < np.exp(min(0.0, log_r)):
            self.w, self.dens, self.loglik, self.distance = new, dens, ll, dist
            self.accepted["g"] += 1
            return True
        return False

    def update_r(self, delta: Optional[float] = None) -> bool:
        """Hit-and-run move on the centering correlation matrix.

        ``delta`` overrides the truncated-normal step length (for testing).
        """
        if not self.gaussian:
            raise RuntimeError("update_r needs a Gaussian centering copula")
        self.proposed["r"] += 1
        scale = self.config.hr_scale
        xi = least_eigenvalue(self.r)
        bound = xi / sqrt(2.0)
        if delta is None:
            delta = truncated_normal(scale, bound, self.rng)
        h = hit_and_run_direction(self.d, delta, self.rng)
        r_new = self.r + h
        np.fill_diagonal(r_new, 1.0)
        xi_new = least_eigenvalue(r_new)
        u_acc = self.rng.random()
        if xi_new <= 0:
            log_.warning("hit-and-run proposal lost positive definiteness; rejected")
            return False
        if abs(delta) >= xi_new / sqrt(2.0):
            return False  # reverse move impossible
        g0_new = Gaussian(r_new, self.config.prior.centering.n_qmc).project(self.k).flat().copy()
        dist = self.fast_distance((self.w - g0_new).reshape(self.k))
        log_h = _log_tn_mass(scale, bound) - _log_tn_mass(scale, xi_new / sqrt(2.0))
        log_r = 0.5 * self.alpha * (self.distance - dist) + log_h
        if u_acc < np.exp(min(0.0, log_r)):
            self.r, self.g0, self.distance = r_new, g0_new, dist
            self.accepted["r"] += 1
            return True
        return False

    def update_marginals(self) -> bool:
        if self.walk is None:
            return False
        self.proposed["marginals"] += 1
        self.walk.refresh()
        old = self.walk.x
        _, acc = self.walk.step(self.rng)
        if self.walk.x is not old:
            self.u = self.energy.pseudo(self.walk.x)
            self._build_kernels()
            self.accepted["marginals"] += 1
        return acc

    def sweep(self):
        for _ in range(self.config.g_subsweeps):
            self.update_g()
        if self.gaussian:
            self.update_r()
        if self.walk is not None:
            self.update_marginals()

    # -- bookkeeping -------------------------------------------------------------------

    def refresh(self):
        """Recompute the cached density and distance from scratch."""
        if self.n:
            self.dens = self._full_density(self.w)
            self.loglik = self._sum_log(self.dens)
        self.distance = self.fast_distance((self.w - self.g0).reshape(self.k))

    def cache_errors(self) -> tuple[float, float]:
        dens = self._full_density(self.w)
        ll = self._sum_log(dens)
        dist = self.fast_distance((self.w - self.g0).reshape(self.k))
        return abs(ll - self.loglik), abs(dist - self.distance)

    @property
    def state(self) -> ChainState:
        theta = None if self.walk is None else self.walk.x.copy()
        return ChainState(YettCopula(self.w.reshape(self.k)), None if self.r is None else self.r.copy(),
                          theta, self.loglik, self.distance)

    def acceptance_rates(self) -> dict:
        return {b: (self.accepted[b] / self.proposed[b] if self.proposed[b] else None) for b in self.accepted}


# -- chain container and persistence -----------------------------------------------------------


@dataclass
class Chain:
    k: tuple
    masses: np.ndarray
    r: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    loglik: Optional[np.ndarray] = None
    logprior: Optional[np.ndarray] = None
    iters: Optional[np.ndarray] = None
    config: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def __len__(self):
        return self.masses.shape[0]

    def states(self):
        for w in self.masses:
            yield YettCopula(w.reshape(self.k))


def _columns(k, d, r_present, n_theta):
    cols = ["iter"] + [f"w{i}" for i in range(int(np.prod(k)))]
    if r_present:
        cols += [f"r{i}_{j}" for i in range(d) for j in range(i + 1, d)]
    cols += [f"theta{i}" for i in range(n_theta)]
    return cols + ["loglik", "logprior"]


class ChainWriter:
    """Append-only text writer; every record is flushed so a crash leaves a readable prefix."""

    def __init__(self, path, k, config: dict, r_present: bool, n_theta: int):
        self.fh = open(path, "w", encoding="utf-8")
        d = len(k)
        self.fh.write(f"# {CHAIN_FORMAT} {CHAIN_VERSION}\n# d {d}\n# k {' '.join(map(str, k))}\n")
        self.fh.write(f"# config {json.dumps(config, sort_keys=True)}\n")
        self.fh.write(",".join(_columns(k, d, r_present, n_theta)) + "\n")
        self.fh.flush()

    def write(self, it, w, r, theta, ll, lp):
        vals = [*w]
        if r is not None:
            vals += list(r[np.triu_indices(r.shape[0], 1)])
        if theta is not None:
            vals += list(theta)
        vals += [ll, lp]
        self.fh.write(str(it) + "," + ",".join(f"{x:.17g}" for x in vals) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def read_chain(path) -> Chain:
    """Read a chain file; a truncated final record is dropped with a warning."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines[-1]:
        # every complete record ends with a newline; a cut one may still parse
        log_.warning("dropping truncated chain record in %s", path)
        lines = lines[:-1]
    meta = {}
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            key, _, value = line[2:].partition(" ")
            meta[key] = value
        else:
            body_start = i
            break
    if meta.get(CHAIN_FORMAT) is None:
        raise ValueError(f"{path} is not a chain file")
    if int(meta[CHAIN_FORMAT]) != CHAIN_VERSION:
        raise ValueError(f"unsupported chain format version {meta[CHAIN_FORMAT]}")
    k = tuple(int(x) for x in meta["k"].split())
    config = json.loads(meta.get("config", "{}"))
    header = lines[body_start].split(",")
    rows = []
    for line in lines[body_start + 1:]:
        if not line:
            continue
        parts = line.split(",")
        try:
            if len(parts) != len(header):
                raise ValueError
            rows.append([float(x) for x in parts])
        except ValueError:
            log_.warning("dropping truncated chain record in %s", path)
            break
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    col = {name: i for i, name in enumerate(header)}
    K = int(np.prod(k))
    masses = arr[:, col["w0"]:col["w0"] + K]
    rcols = [i for name, i in col.items() if name.startswith("r")]
    tcols = [i for name, i in col.items() if name.startswith("theta")]
    return Chain(
        k, masses,
        arr[:, rcols] if rcols else None,
        arr[:, tcols] if tcols else None,
        arr[:, col["loglik"]], arr[:, col["logprior"]], arr[:, 0].astype(int), config,
    )


def run(data, config: RunConfig, models=None, out_path=None, g_init=None, waic: bool = True,
        progress: Optional[int] = None) -> Chain:
    """Run the sampler; keep post-burn-in draws every ``thin`` sweeps.

    Returns the chain held in memory and, when ``out_path`` is given, also
    streams it to disk.
    """
    t0 = time.perf_counter()
    sampler = Sampler(data, config, models, g_init)
    n_saved = config.n_saved()
    K = sampler.w.size
    masses = np.empty((n_saved, K))
    rs = np.empty((n_saved, sampler.d, sampler.d)) if sampler.gaussian else None
    thetas = np.empty((n_saved, sampler.walk.x.size)) if sampler.walk is not None else None
    lls = np.empty(n_saved)
    lps = np.empty(n_saved)
    iters = np.empty(n_saved, dtype=int)
    acc = WAICAccumulator(sampler.n) if (waic and sampler.n) else None
    writer = None
    if out_path is not None:
        writer = ChainWriter(out_path, config.k, config.echo(), sampler.gaussian,
                             0 if thetas is None else thetas.shape[1])
    s = 0
    try:
        for it in range(config.iterations):
            sampler.sweep()
            if config.refresh_every and (it + 1) % config.refresh_every == 0:
                sampler.refresh()
            if progress and (it + 1) % progress == 0:
                log_.info("iteration %d/%d, acceptance %s", it + 1, config.iterations, sampler.acceptance_rates())
            if it >= config.burnin and (it - config.burnin) % config.thin == 0:
                masses[s] = sampler.w
                lls[s] = sampler.loglik
                lps[s] = sampler.log_prior()
                iters[s] = it
                if rs is not None:
                    rs[s] = sampler.r
                if thetas is not None:
                    thetas[s] = sampler.walk.x
                if acc is not None:
                    acc.update(sampler.pointwise_loglik())
                if writer is not None:
                    writer.write(it, sampler.w, sampler.r, None if thetas is None else sampler.walk.x,
                                 lls[s], lps[s])
                s += 1
    finally:
        if writer is not None:
            writer.close()
    summary = {
        "iterations": config.iterations,
        "saved": n_saved,
        "acceptance": sampler.acceptance_rates(),
        "runtime_seconds": time.perf_counter() - t0,
    }
    if acc is not None and acc.count:
        summary["waic"] = acc.value()
    r_out = None
    if rs is not None:
        iu = np.triu_indices(sampler.d, 1)
        r_out = rs[:, iu[0], iu[1]]
    chain = Chain(config.k, masses, r_out, thetas, lls, lps, iters, config.echo(), summary)
    chain.sampler = sampler
    return chain


# -- Gaussian copula baseline -------------------------------------------------------------


def run_gaussian_copula(u, iterations: int, burnin: int = 0, thin: int = 1, seed=0,
                        scale: float = 0.1, r_init=None) -> Chain:
    """Random-walk Metropolis (hit-and-run steps) for a Gaussian copula with flat prior on R.

    Uses the same correlation-matrix proposal as the centering update. The
    returned chain carries the correlation draws and the WAIC in ``summary``.
    """
    t0 = time.perf_counter()
    u = np.asarray(u, dtype=float)
    n, d = u.shape
    rng = make_rng(seed)
    r = np.eye(d) if r_init is None else np.array(r_init, dtype=float)
    pw = gaussian_copula_logpdf(u, r)
    ll = float(pw.sum())
    saved = []
    acc = WAICAccumulator(n)
    accepted = 0
    iu = np.triu_indices(d, 1)
    for it in range(iterations):
        xi = least_eigenvalue(r)
        bound = xi / sqrt(2.0)
        delta = truncated_normal(scale, bound, rng)
        r_new = r + hit_and_run_direction(d, delta, rng)
        np.fill_diagonal(r_new, 1.0)
        xi_new = least_eigenvalue(r_new)
        u_acc = rng.random()
        if xi_new > 0 and abs(delta) < xi_new / sqrt(2.0):
            pw_new = gaussian_copula_logpdf(u, r_new)
            ll_new = float(pw_new.sum())
            log_r = ll_new - ll + _log_tn_mass(scale, bound) - _log_tn_mass(scale, xi_new / sqrt(2.0))
            if u_acc < np.exp(min(0.0, log_r)):
                r, pw, ll = r_new, pw_new, ll_new
                accepted += 1
        if it >= burnin and (it - burnin) % thin == 0:
            saved.append((r[iu].copy(), ll))
            acc.update(pw)
    rr = np.array([s[0] for s in saved]).reshape(len(saved), -1)
    summary = {
        "iterations": iterations, "saved": len(saved),
        "acceptance": {"r": accepted / iterations if iterations else None},
        "runtime_seconds": time.perf_counter() - t0,
    }
    if acc.count:
        summary["waic"] = acc.value()
    return Chain((d,), np.zeros((len(saved), 0)), rr, None, np.array([s[1] for s in saved]), None, None,
                 {"model": "gaussian-copula", "iterations": iterations, "burnin": burnin, "thin": thin,
                  "seed": seed, "scale": scale}, summary)
