"""Command-line entry point: ``proxidist {estimate,simulate,diagnose,gaussian-bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import ConfigError, InputError, NumericalError, ProxidistError
from .bands import (cdf_band, invert_band, isotonic_project, monotone_envelope,
                    multiplier_critical_value)
from .basis import BasisSpec, FoldStandardizer, build_basis
from .bridge import SolverConfig, assemble_moments, picard_partial_sums
from .data import fit_preprocess, load_dataset, load_rhc, screen_covariates
from .estimator import (crossfit_cdf, cvar_estimate, default_grid, make_folds, naive_aipw_cdf,
                        quantile_from_cdf)
from .reporting import config_hash, manifest, write_json, write_table

logger = logging.getLogger("proxidist")

EXIT_INPUT, EXIT_NUMERICAL, EXIT_CONFIG = 2, 3, 4
COMPONENTS = ("1", "2a", "2b", "3")
RHC_TAUS = tuple(round(0.10 + 0.05 * k, 2) for k in range(17))


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; serialized into ``manifest.json``."""

    command: str = "estimate"
    data: str | None = None
    recipe: str = "generic"
    schema: dict = field(default_factory=dict)
    basis: dict | None = None
    screen_k: int | None = None
    solver: dict | None = None
    folds: int = 5
    grid_size: int = 61
    grid_range: tuple = (0.02, 0.98)
    taus: tuple = RHC_TAUS
    cvar_taus: tuple = (0.25, 0.50, 0.75)
    alpha: float = 0.05
    multipliers: int = 1000
    law: str = "rademacher"
    seed: int = 0
    out: str = "results"
    component: str | None = None
    ns: tuple | None = None
    reps: int | None = None
    rhos: tuple | None = None
    degrees: tuple = (1, 2, 3)
    smoothness: float = 0.5

    @classmethod
    def from_dict(cls, d):
        d = dict(d.get("config", d))
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def resolve(self):
        """Fill recipe-dependent defaults so the manifest records the effective config."""
        if self.command == "gaussian-bench":
            self.command, self.component = "simulate", "2b"
        if self.recipe not in ("generic", "rhc"):
            raise ConfigError(f"unknown recipe {self.recipe!r}")
        rhc = self.recipe == "rhc"
        if self.basis is None:
            self.basis = ({"kind": "realdata-interaction"} if rhc
                          else {"kind": "polynomial", "degree": 1})
        if self.screen_k is None and rhc:
            self.screen_k = 5
        if self.solver is None:
            self.solver = {"method": "ridge", "ridge_constant": 0.1 if rhc else 0.01}
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.multipliers < 1:
            raise ConfigError("multipliers must be positive")
        if self.folds < 2:
            raise ConfigError("need at least two folds")
        if self.command == "simulate":
            if self.component not in COMPONENTS:
                raise ConfigError(f"invalid component {self.component!r}; choose from {COMPONENTS}")
        for key in ("taus", "cvar_taus", "grid_range", "degrees"):
            setattr(self, key, tuple(getattr(self, key)))
        for key in ("ns", "rhos"):
            if getattr(self, key) is not None:
                setattr(self, key, tuple(getattr(self, key)))
        return self

    def specs(self):
        base = {k: v for k, v in self.basis.items() if k != "side"}
        return (BasisSpec.from_dict({**base, "side": "w"}), BasisSpec.from_dict({**base, "side": "z"}))

    def solver_config(self):
        return SolverConfig.from_dict(self.solver)


def _subseed(seed, k):
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


# ---- estimate ----------------------------------------------------------------

def load_for(cfg):
    if cfg.data is None:
        raise InputError("no data file given (--data)")
    if cfg.recipe == "rhc":
        data = load_rhc(cfg.data)
    else:
        if not cfg.schema:
            raise ConfigError("generic recipe needs a schema (--y/--a/--z/--w/--x or config)")
        data = load_dataset(cfg.data, cfg.schema)
    data.check_arms()
    return fit_preprocess(data).apply(data)


def _with_screening(cfg, data):
    sw, sz = cfg.specs()
    chosen = None
    if cfg.screen_k:
        chosen = screen_covariates(data, cfg.screen_k)
        sw, sz = sw.with_(x_columns=tuple(chosen)), sz.with_(x_columns=tuple(chosen))
    return sw, sz, chosen


def run_estimate(cfg):
    data = load_for(cfg)
    sw, sz, chosen = _with_screening(cfg, data)
    grid = default_grid(data.y, cfg.grid_size, *cfg.grid_range)
    folds = make_folds(data.n, cfg.folds, cfg.seed)
    est = crossfit_cdf(data, sw, sz, cfg.solver_config(), folds=folds, grid=grid, levels=grid)
    naive = naive_aipw_cdf(data, grid, folds)
    c = multiplier_critical_value(est.influence, cfg.multipliers, cfg.alpha,
                                  seed=_subseed(cfg.seed, 1), law=cfg.law)
    band = cdf_band(est, c, cfg.alpha, cfg.multipliers, cfg.law)
    qb = invert_band(monotone_envelope(band), cfg.taus)
    curves = {"Naive": naive.cdf, "POR": est.por, "PIPW": est.pipw, "PDR": est.cdf}
    proj = {k: np.vstack([isotonic_project(v[a]) for a in (0, 1)]) for k, v in curves.items()}
    quants = {k: np.vstack([quantile_from_cdf(grid, p[a], cfg.taus) for a in (0, 1)])
              for k, p in proj.items()}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        cv = cvar_estimate(est.levels, est.shortfall, est.shortfall_influence, cfg.cvar_taus, cfg.alpha)
    tables = {}
    rows = []
    for a in (0, 1):
        for k, y in enumerate(grid):
            rows.append({"arm": a, "y": y, **{m: curves[m][a, k] for m in curves},
                         **{f"{m}_proj": proj[m][a, k] for m in curves}})
    tables["cdf.csv"] = (pd.DataFrame(rows), "y: outcome scale; CDF columns: probability")
    tables["bands.csv"] = (pd.DataFrame({
        "arm": np.repeat([0, 1], grid.size), "y": np.tile(grid, 2),
        "F_hat": est.cdf.ravel(), "F_proj": proj["PDR"].ravel(),
        "L": band.lower.ravel(), "U": band.upper.ravel()}), "probability")
    tables["qte.csv"] = (pd.DataFrame({
        "tau": cfg.taus, **{m: quants[m][1] - quants[m][0] for m in ("Naive", "POR", "PIPW", "PDR")},
        "PDR_lower": qb.qte_lower, "PDR_upper": qb.qte_upper}), "outcome scale")
    tables["quantile_bands.csv"] = (pd.DataFrame({
        "tau": cfg.taus, "QL0": qb.lower[0], "QU0": qb.upper[0], "QL1": qb.lower[1],
        "QU1": qb.upper[1], "dQL": qb.qte_lower, "dQU": qb.qte_upper}), "outcome scale")
    tables["cvar.csv"] = (pd.DataFrame({
        "tau": cv.taus, "C0": cv.value[0], "C1": cv.value[1], "se0": cv.se[0], "se1": cv.se[1],
        "delta_C": cv.contrast, "delta_se": cv.contrast_se, "delta_lower": cv.contrast_lower,
        "delta_upper": cv.contrast_upper, "Q0": cv.quantile[0], "Q1": cv.quantile[1],
        "boundary0": cv.boundary[0], "boundary1": cv.boundary[1]}), "outcome scale")
    diagnostics = {
        "n": data.n, "n_treated": int(data.a.sum()), "n_dropped": data.n_dropped,
        "screened_covariates": None if chosen is None else [data.x_names[j] for j in chosen],
        "basis_dimension": {"w": int(build_basis(sw, data).shape[1]),
                            "z": int(build_basis(sz, data).shape[1])},
        "critical_value": c, "folds": est.diagnostics, "naive": naive.diagnostics,
        "warnings": [str(w.message) for w in caught]}
    return tables, diagnostics


# ---- simulate ----------------------------------------------------------------

def run_simulate(cfg):
    from .simulators import experiments as ex
    from .simulators.gaussian import DEFAULT_NS, gaussian_bench_regimes

    comp = cfg.component
    if comp == "2b":
        res = gaussian_bench_regimes(reps=cfg.reps or 3000, ns=cfg.ns or DEFAULT_NS, seed=cfg.seed)
        rows, picard = [], []
        for name, r in res.items():
            for row in r["rows"]:
                rows.append({"regime": name, "rho_l": r["config"]["rho_l"], **row,
                             "poly_exponent": r["polynomial_exponent"],
                             "empirical_exponent": r["exponent"], "picard_status": r["picard_status"]})
            picard += [{"regime": name, "m": m + 1, "partial_sum": v} for m, v in enumerate(r["picard"])]
        tables = {"gaussian_bench.csv": (pd.DataFrame(rows), "bias/variance/mse: squared outcome scale"),
                  "picard.csv": (pd.DataFrame(picard), "dimensionless")}
        return tables, {name: {"exponent": r["exponent"]} for name, r in res.items()}
    if comp == "2a":
        summary, raw = ex.weak_proxy_sweep(rhos=cfg.rhos or ex.SWEEP_RHOS,
                                           n=(cfg.ns or (4000,))[0], reps=cfg.reps or 1000,
                                           seed=cfg.seed, n_multipliers=cfg.multipliers,
                                           alpha=cfg.alpha)
        summary = summary.drop(columns=["seconds"])
        return ({"weak_proxy.csv": (summary, "CDF metrics: probability; QTE: outcome scale"),
                 "replications.csv": (raw, "mixed")}, {})
    ns = cfg.ns or ((500, 1000, 2000, 4000, 8000) if comp == "1" else (800, 1600, 3200, 6400))
    kwargs = {"n_multipliers": cfg.multipliers, "alpha": cfg.alpha}
    frame = ex.coverage_experiment(int(comp), ns, cfg.reps or 1000, seed=cfg.seed, **kwargs)
    summary = ex.summarize(frame)
    return ({"summary.csv": (summary, "coverage: proportion; bias/rmse/length: outcome scale"),
             "replications.csv": (frame, "mixed")},
            {"failure_rate": float(frame["failed"].mean())})


# ---- diagnose ----------------------------------------------------------------

def spectral_sweep(data, degrees, smoothness=0.5, solver=None, specs=None):
    """Full-sample spectra, kappa_min, dual norms and Picard sums over basis degrees."""
    solver = solver or SolverConfig()
    n = data.n
    summary, spectra = [], []
    plans = ([(f"degree {d}", BasisSpec(kind="polynomial", side="w", degree=d),
               BasisSpec(kind="polynomial", side="z", degree=d)) for d in degrees]
             if specs is None else [("configured", *specs)])
    for label, sw, sz in plans:
        bW = FoldStandardizer().fit_transform(build_basis(sw, data))
        bZ = FoldStandardizer().fit_transform(build_basis(sz, data))
        dim = max(bW.shape[1], bZ.shape[1])
        proxy = dim ** (1 + 2 * smoothness) * np.sqrt(np.log(n)) / n
        for arm in (0, 1):
            ms = assemble_moments(arm, bW, bZ, data.y, data.a)
            fit = solver.solve(ms, n=n)
            _, s, vt = np.linalg.svd(ms.sigma, full_matrices=False)
            loadings = vt @ ms.mu_w
            pos = s > 0
            picard = picard_partial_sums(s[pos], loadings[pos]) if pos.any() else np.zeros(0)
            q = fit.q(bZ)
            summary.append({"basis": label, "d_w": bW.shape[1], "d_z": bZ.shape[1], "arm": arm,
                            "kappa_min": float(s[-1]),
                            "kappa_min_conditional": float(s[-1] / ms.arm_fraction),
                            "dual_coef_norm": float(np.linalg.norm(fit.alpha)),
                            "dual_l2_norm": float(np.sqrt(np.mean((data.a == arm) * q ** 2))),
                            "remainder_proxy": proxy, "admissible": bool(proxy < n ** -0.5)})
            spectra += [{"basis": label, "arm": arm, "j": j + 1, "singular_value": sv,
                         "loading": ld, "picard_sum": ps}
                        for j, (sv, ld, ps) in enumerate(zip(s[pos], loadings[pos], picard))]
    return pd.DataFrame(summary), pd.DataFrame(spectra)


def run_diagnose(cfg):
    if cfg.data is not None:
        data = load_for(cfg)
        sw, sz, _ = _with_screening(cfg, data)
        specs = (sw, sz) if cfg.recipe == "rhc" or cfg.basis.get("kind") != "polynomial" else None
        summary, spectra = spectral_sweep(data, cfg.degrees, cfg.smoothness, cfg.solver_config(), specs)
    else:
        from .simulators.dgp import Component1Config, generate
        frames, specs_ = [], []
        for k, rho in enumerate(cfg.rhos or (0.90, 0.75, 0.60, 0.45, 0.30, 0.20)):
            dcfg = Component1Config(rho=rho, n=(cfg.ns or (4000,))[0])
            data, _ = generate(dcfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, k])))
            s, sp = spectral_sweep(data, cfg.degrees, cfg.smoothness, cfg.solver_config())
            s.insert(0, "rho", rho)
            sp.insert(0, "rho", rho)
            frames.append(s)
            specs_.append(sp)
        summary, spectra = pd.concat(frames, ignore_index=True), pd.concat(specs_, ignore_index=True)
    return ({"spectral_summary.csv": (summary, "singular values and norms: basis scale"),
             "spectra.csv": (spectra, "basis scale")},
            {"summary": summary.to_dict(orient="records")})


# ---- driver ------------------------------------------------------------------

RUNNERS = {"estimate": run_estimate, "simulate": run_simulate, "diagnose": run_diagnose}


def execute(cfg):
    """Run a resolved config and write every output file; returns the output paths."""
    cfg.resolve()
    conf = cfg.to_dict()
    # the output location does not change any result, so it stays out of the hash
    chash = config_hash({k: v for k, v in conf.items() if k != "out"})
    start = time.perf_counter()
    tables, diagnostics = RUNNERS[cfg.command](cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (frame, units) in tables.items():
        written.append(write_table(out / name, frame, chash, units).name)
    written.append(write_json(out / "diagnostics.json", {"config_hash": chash, **diagnostics}).name)
    write_json(out / "manifest.json", manifest(conf, written + ["manifest.json"],
                                               time.perf_counter() - start, chash=chash))
    return [out / w for w in written + ["manifest.json"]]


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="proxidist", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config or a previous manifest.json")
    common.add_argument("--data", help="input CSV")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--reps", type=int)
    common.add_argument("--n", type=_ints, dest="ns", help="comma-separated sample sizes")
    common.add_argument("--alpha", type=float)
    common.add_argument("--multipliers", type=int)
    common.add_argument("--folds", type=int)
    common.add_argument("--recipe", choices=("generic", "rhc"))
    common.add_argument("--y", help="outcome column")
    common.add_argument("--a", help="treatment column")
    common.add_argument("--z", type=_names, help="treatment-inducing proxy columns")
    common.add_argument("--w", type=_names, help="outcome-inducing proxy columns")
    common.add_argument("--x", help="covariate columns (comma list or '*')")
    common.add_argument("--taus", type=_floats)
    common.add_argument("--grid-size", type=int, dest="grid_size")
    common.add_argument("--screen-k", type=int, dest="screen_k")
    common.add_argument("--rhos", type=_floats)
    common.add_argument("--degrees", type=_ints)
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("estimate", parents=[common], help="analyze a data file")
    sim = sub.add_parser("simulate", parents=[common], help="run a simulation component")
    sim.add_argument("--component", choices=COMPONENTS)
    sub.add_parser("diagnose", parents=[common], help="spectral weak-proxy report")
    sub.add_parser("gaussian-bench", parents=[common], help="alias of simulate --component 2b")
    return p


def config_from_args(args):
    base = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InputError(f"no such config file: {path}")
        try:
            base = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = RunConfig.from_dict(base)
    cfg.command = args.command
    for key in ("data", "out", "seed", "reps", "ns", "alpha", "multipliers", "folds", "recipe",
                "taus", "grid_size", "screen_k", "rhos", "degrees", "component"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    schema = dict(cfg.schema)
    for role in ("y", "a", "z", "w"):
        if getattr(args, role) is not None:
            schema[role] = getattr(args, role)
    if args.x is not None:
        schema["x"] = "*" if args.x.strip() == "*" else _names(args.x)
    cfg.schema = schema
    if args.command == "estimate" and cfg.recipe == "generic" and "x" not in schema and schema:
        schema["x"] = []
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        paths = execute(cfg)
    except ConfigError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"error [estimation]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ProxidistError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
