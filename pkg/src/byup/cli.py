"""Command-line interface: ``byup fit | simulate | diagnose | compare``.

Config files are key=value text, either flat with dotted keys
(``prior.alpha = 50``) or sectioned (``[prior]`` then ``alpha = 50``).
Unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics, mcmc
from .centering import Gaussian, Independence, check_correlation
from .marginals import FAMILIES, MarginalModel, TWalkSettings
from .prior import PriorSpec
from .proposals import ProposalKind

log = logging.getLogger("byup")

TOP = "__top__"

KEYS = {
    "seed": int,
    "prior.kind": str,
    "prior.alpha": float,
    "prior.gamma": float,
    "prior.centering": str,
    "prior.r": str,
    "prior.n_qmc": int,
    "proposal.kind": str,
    "proposal.u": int,
    "proposal.tau": float,
    "proposal.hastings": str,
    "run.iterations": int,
    "run.burnin": int,
    "run.thin": int,
    "run.g_subsweeps": int,
    "run.hr_scale": float,
    "run.refresh_every": int,
    "model.k": str,
    "marginals": str,
    "data.path": str,
    "output.dir": str,
    "report.ess": str,
    "report.baseline": str,
    "report.baseline_iterations": int,
    "twalk.move_probs": str,
    "twalk.a_walk": float,
    "twalk.a_traverse": float,
    "twalk.n1phi": float,
}
MARGINAL_KEY = re.compile(r"^marginals\.(\d+)(\.init)?$")
ESS_FUNCTIONALS = ("cells", "loglik", "logprior")


class ConfigError(ValueError):
    pass


# -- config --------------------------------------------------------------------------


def parse_config_text(text: str) -> dict:
    """Parse flat or sectioned key=value text into a dict of dotted keys."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(f"[{TOP}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    raw = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            raw[key if section == TOP else f"{section}.{key}"] = value.strip()
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    """Type-convert known keys; collect every problem before raising."""
    out, errors = {}, []
    for key, value in raw.items():
        if key in KEYS:
            try:
                out[key] = KEYS[key](value)
            except ValueError:
                errors.append(f"{key}: cannot convert {value!r} to {KEYS[key].__name__}")
        elif MARGINAL_KEY.match(key):
            out[key] = str(value)
        else:
            errors.append(f"unknown config key {key!r}")
    if errors:
        raise ConfigError("; ".join(errors))
    return out


def read_config(path) -> dict:
    try:
        return parse_config_text(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def echo_config(cfg: dict) -> str:
    """Sectioned text that parses back to ``cfg``."""
    top = [k for k in sorted(cfg) if "." not in k]
    lines = [f"{k} = {cfg[k]}" for k in top]
    sections: dict = {}
    for key in sorted(cfg):
        if "." in key:
            section, _, name = key.partition(".")
            sections.setdefault(section, []).append(f"{name} = {cfg[key]}")
    for section, body in sections.items():
        lines += ["", f"[{section}]", *body]
    return "\n".join(lines) + "\n"


def _floats(text: str) -> list[float]:
    return [float(x) for x in re.split(r"[,\s]+", text.strip()) if x]


def degree_from(cfg: dict, d: int) -> tuple:
    if "model.k" not in cfg:
        raise ConfigError("model.k is required")
    k = [int(x) for x in _floats(cfg["model.k"])]
    if len(k) == 1:
        k = k * d
    if len(k) != d:
        raise ConfigError(f"model.k has {len(k)} entries but the data has {d} columns")
    return tuple(k)


def prior_from(cfg: dict, d: int) -> PriorSpec:
    if "prior.alpha" not in cfg:
        raise ConfigError("prior.alpha is required")
    centering = cfg.get("prior.centering", "independence").lower()
    if centering == "independence":
        c0 = Independence(d)
    elif centering == "gaussian":
        r = np.eye(d)
        if "prior.r" in cfg:
            off = _floats(cfg["prior.r"])
            iu = np.triu_indices(d, 1)
            if len(off) != iu[0].size:
                raise ConfigError(f"prior.r needs {iu[0].size} upper-triangle entries")
            r[iu] = off
            r[iu[::-1]] = off
        try:
            c0 = Gaussian(check_correlation(r), cfg.get("prior.n_qmc", 2**16))
        except ValueError as exc:
            raise ConfigError(f"prior.r: {exc}") from None
    else:
        raise ConfigError(f"prior.centering must be independence or gaussian, not {centering!r}")
    try:
        return PriorSpec(cfg.get("prior.kind", "icar"), cfg["prior.alpha"], cfg.get("prior.gamma", 0.99), c0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def marginals_from(cfg: dict, d: int) -> list[MarginalModel]:
    base = [x.strip() for x in cfg.get("marginals", "empirical").split(",")]
    if len(base) == 1:
        base = base * d
    if len(base) != d:
        raise ConfigError(f"marginals lists {len(base)} families for {d} columns")
    inits: dict = {}
    for key, value in cfg.items():
        m = MARGINAL_KEY.match(key)
        if not m:
            continue
        j = int(m.group(1))
        if j >= d:
            raise ConfigError(f"{key}: axis {j} out of range")
        if m.group(2):
            inits[j] = np.array(_floats(value))
        else:
            base[j] = value.strip()
    models = []
    for j, fam in enumerate(base):
        if fam == "empirical":
            models.append(MarginalModel.empirical())
        elif fam in FAMILIES:
            try:
                models.append(MarginalModel.parametric(fam, inits.get(j)))
            except ValueError as exc:
                raise ConfigError(f"marginals.{j}: {exc}") from None
        else:
            raise ConfigError(f"unknown marginal family {fam!r} (choose empirical or {sorted(FAMILIES)})")
    return models


def run_config_from(cfg: dict, d: int) -> mcmc.RunConfig:
    tw = TWalkSettings()
    if "twalk.move_probs" in cfg:
        tw.move_probs = tuple(_floats(cfg["twalk.move_probs"]))
    for name in ("a_walk", "a_traverse", "n1phi"):
        if f"twalk.{name}" in cfg:
            setattr(tw, name, cfg[f"twalk.{name}"])
    try:
        return mcmc.RunConfig(
            k=degree_from(cfg, d),
            iterations=cfg.get("run.iterations", 1000),
            burnin=cfg.get("run.burnin", 0),
            thin=cfg.get("run.thin", 1),
            seed=cfg.get("seed", 0),
            proposal=ProposalKind(cfg.get("proposal.kind", "ire"), cfg.get("proposal.u", 1),
                                  cfg.get("proposal.tau", 1.0), cfg.get("proposal.hastings", "exact")),
            prior=prior_from(cfg, d),
            hr_scale=cfg.get("run.hr_scale", 0.5),
            g_subsweeps=cfg.get("run.g_subsweeps", 1),
            refresh_every=cfg.get("run.refresh_every", 1000),
            twalk=tw,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- data I/O -------------------------------------------------------------------------------


def read_csv(path) -> tuple[np.ndarray, Optional[list]]:
    """Comma-delimited numeric data with an optional header row."""
    rows, header = [], None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [float(c) for c in row]
            except ValueError:
                if lineno == 1 and header is None and not rows:
                    header = [c.strip() for c in row]
                    continue
                raise ValueError(f"{path}: row {lineno} is not numeric: {row}") from None
            if rows and len(values) != len(rows[0]):
                raise ValueError(f"{path}: row {lineno} has {len(values)} fields, expected {len(rows[0])}")
            if not all(np.isfinite(values)):
                raise ValueError(f"{path}: row {lineno} has a missing or non-finite value")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    if data.shape[1] < 2:
        raise ValueError(f"{path}: need at least two columns")
    if header is not None and len(header) != data.shape[1]:
        raise ValueError(f"{path}: header has {len(header)} names for {data.shape[1]} columns")
    return data, header


def write_csv(path, data, header=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(data):
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def data_digest(data) -> str:
    return hashlib.sha256(np.ascontiguousarray(data, dtype=float).tobytes()).hexdigest()


# -- commands ---------------------------------------------------------------------------------


def cmd_simulate(model_id: str, n: int, out_dir) -> Path:
    mix = diagnostics.model(model_id)
    if n < 1:
        raise ValueError("n must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{model_id.upper()}_n{n}.csv"
    write_csv(path, mix.perfect_sample(n), ["x1", "x2"])
    return path


def ess_report(chain: mcmc.Chain, functionals) -> dict:
    if not functionals:
        raise ValueError("no ESS functionals requested")
    out = {}
    for name in functionals:
        if name not in ESS_FUNCTIONALS:
            raise ValueError(f"unknown ESS functional {name!r}; choose from {ESS_FUNCTIONALS}")
        if len(chain) < 10:
            out[name] = None
            continue
        if name == "cells":
            vals = np.array([diagnostics.ess(chain.masses[:, c]) for c in range(chain.masses.shape[1])])
            out[name] = {"min": float(vals.min()), "median": float(np.median(vals)),
                         "max": float(vals.max()), "draws": len(chain)}
        else:
            out[name] = diagnostics.ess(getattr(chain, name))
    return out


def _fit_one(data, cfg: dict, out_dir: Path, tag: str) -> dict:
    d = data.shape[1]
    config = run_config_from(cfg, d)
    models = marginals_from(cfg, d)
    chain = mcmc.run(data, config, models, out_dir / f"chain{tag}.txt")
    summary = dict(chain.summary)
    summary["model"] = "byup"
    summary["seed"] = config.seed
    summary["k"] = list(config.k)
    summary["data_sha256"] = data_digest(data)
    summary["n"] = int(data.shape[0])
    functionals = [f.strip() for f in cfg.get("report.ess", "cells,loglik").split(",") if f.strip()]
    summary["ess"] = ess_report(chain, functionals)
    rows = [{"model": f"byup k={'x'.join(map(str, config.k))}", "waic": summary.get("waic")}]
    if cfg.get("report.baseline", "").lower() == "gaussian":
        u = chain.sampler.u
        base = mcmc.run_gaussian_copula(u, cfg.get("report.baseline_iterations", config.iterations),
                                        config.burnin, config.thin, config.seed)
        summary["baseline"] = base.summary
        rows.append({"model": "gaussian-copula", "waic": base.summary.get("waic")})
    summary["waic_table"] = rows
    (out_dir / f"summary{tag}.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    return summary


def cmd_fit(cfg: dict, out_dir=None, seed=None, chains: int = 1) -> list[dict]:
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    if "data.path" not in cfg:
        raise ConfigError("data.path is required for fit")
    out_dir = Path(out_dir or cfg.get("output.dir", "byup-out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    data, _ = read_csv(cfg["data.path"])
    run_config_from(cfg, data.shape[1])  # fail fast on config errors
    marginals_from(cfg, data.shape[1])
    (out_dir / "config.txt").write_text(echo_config(cfg), encoding="utf-8")
    if chains <= 1:
        return [_fit_one(data, cfg, out_dir, "")]
    base_seed = cfg.get("seed", 0)
    jobs = []
    with ProcessPoolExecutor(max_workers=chains) as pool:
        for c in range(chains):
            cfg_c = dict(cfg, seed=base_seed + c)
            jobs.append(pool.submit(_fit_one, data, cfg_c, out_dir, f"_{c}"))
        return [j.result() for j in jobs]


def _reference_density(name: str):
    if name.upper() in diagnostics.MODELS:
        return diagnostics.model(name).copula_density
    raise ValueError(f"unknown reference copula {name!r}")


def cmd_diagnose(chain_path, out_dir=None, reference: Optional[str] = None, grid: int = 21,
                 functionals=("cells", "loglik")) -> dict:
    chain = mcmc.read_chain(chain_path)
    if len(chain) == 0:
        raise ValueError(f"{chain_path} holds no saved states")
    report = {"chain": str(chain_path), "draws": len(chain), "k": list(chain.k),
              "ess": ess_report(chain, list(functionals))}
    d = len(chain.k)
    if reference is not None:
        quad = diagnostics.default_quadrature(d)
        ref = _reference_density(reference)(quad.points)
        post = diagnostics.BernsteinEvaluator(chain.k, quad.points)(chain.masses.mean(axis=0))
        report["hellinger_posterior_mean"] = diagnostics.hellinger_values(post, ref, quad.weights)
        report["reference"] = reference
    out_dir = Path(out_dir) if out_dir is not None else Path(chain_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    if d == 2:
        t = (np.arange(1, grid + 1) - 0.5) / grid
        pts = np.array([(a, b) for a in t for b in t])
        vals = diagnostics.posterior_mean_density(chain.masses, chain.k, pts)
        table = out_dir / f"{Path(chain_path).stem}_density.csv"
        table.write_text(diagnostics.density_table(pts, vals), encoding="utf-8")
        report["density_table"] = str(table)
    (out_dir / f"{Path(chain_path).stem}_diagnose.json").write_text(
        json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    return report


def _load_summary(path) -> list[dict]:
    p = Path(path)
    files = sorted(p.glob("summary*.json")) if p.is_dir() else [p]
    if not files:
        raise ValueError(f"no summary files under {path}")
    return [dict(json.loads(f.read_text(encoding="utf-8")), _source=str(f)) for f in files]


def cmd_compare(paths, tie: float = 2.0) -> dict:
    """WAIC ranking across fit outputs on identical data (smaller is better)."""
    summaries = [s for p in paths for s in _load_summary(p)]
    digests = {s.get("data_sha256") for s in summaries}
    if len(digests) != 1 or None in digests:
        raise ValueError("fit outputs were produced on different datasets")
    rows = []
    for s in summaries:
        for row in s.get("waic_table", []):
            if row.get("waic") is not None:
                rows.append({"model": row["model"], "waic": row["waic"], "seed": s.get("seed"),
                             "source": s["_source"]})
    if len(rows) < 2:
        raise ValueError("need at least two WAIC values to compare")
    rows.sort(key=lambda r: r["waic"])
    for a, b in zip(rows, rows[1:]):
        b["tie_with_previous"] = bool(abs(b["waic"] - a["waic"]) <= tie)
    rows[0]["tie_with_previous"] = False
    return {"ranking": rows, "tie_tolerance": tie,
            "ties": any(r["tie_with_previous"] for r in rows)}


def format_ranking(result: dict) -> str:
    lines = [f"{'rank':>4}  {'WAIC':>14}  model"]
    for i, r in enumerate(result["ranking"], start=1):
        mark = "  (tie)" if r["tie_with_previous"] else ""
        lines.append(f"{i:>4}  {r['waic']:>14.3f}  {r['model']} [seed {r['seed']}]{mark}")
    return "\n".join(lines)


# -- entry point --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="byup", description="Bernstein yett-uniform copula estimation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run the sampler on a CSV dataset")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--out")
    f.add_argument("--chains", type=int, default=1)

    s = sub.add_parser("simulate", help="write a perfect sample from a simulation model")
    s.add_argument("--model", required=True, help="M1..M4")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", default=".")
    s.add_argument("--seed", type=int, help="accepted for uniformity; perfect samples are deterministic")

    g = sub.add_parser("diagnose", help="ESS, Hellinger and posterior-mean density of a chain file")
    g.add_argument("chain")
    g.add_argument("--reference", help="true copula model (M1..M4)")
    g.add_argument("--grid", type=int, default=21)
    g.add_argument("--functionals", default="cells,loglik")
    g.add_argument("--out")
    g.add_argument("--seed", type=int, help="accepted for uniformity; diagnostics are deterministic")

    c = sub.add_parser("compare", help="rank fit outputs by WAIC")
    c.add_argument("fits", nargs="+", help="fit output directories or summary files")
    c.add_argument("--tie", type=float, default=2.0)
    c.add_argument("--out")
    c.add_argument("--seed", type=int, help="accepted for uniformity")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            summaries = cmd_fit(read_config(args.config), args.out, args.seed, args.chains)
            for s in summaries:
                print(json.dumps({k: s[k] for k in ("seed", "acceptance", "waic", "ess") if k in s}, sort_keys=True))
        elif args.command == "simulate":
            print(cmd_simulate(args.model, args.n, args.out))
        elif args.command == "diagnose":
            funcs = [x.strip() for x in args.functionals.split(",") if x.strip()]
            print(json.dumps(cmd_diagnose(args.chain, args.out, args.reference, args.grid, funcs),
                             indent=2, sort_keys=True))
        elif args.command == "compare":
            result = cmd_compare(args.fits, args.tie)
            print(format_ranking(result))
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "compare.json").write_text(json.dumps(result, indent=2), encoding="utf-8")
    except (ConfigError, ValueError, OSError) as exc:
        print(f"byup: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
