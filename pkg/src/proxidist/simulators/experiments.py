"""Monte Carlo drivers: coverage experiments and the weak-proxy sweep.

Replication ``r`` draws from ``SeedSequence([seed, r])`` so that serial and
parallel runs agree exactly; results are sorted by replication index
before aggregation.
"""

from __future__ import annotations

import logging
import os
import time
import warnings

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .._validation import ProxidistError
from ..bands import (cdf_band, estimated_density_delta_band, invert_band, isotonic_project,
                     monotone_envelope, multiplier_critical_value, nonexpansive,
                     pointwise_interval)
from ..bridge import SolverConfig
from ..estimator import crossfit_cdf, cvar_estimate, make_folds, naive_aipw_cdf, quantile_from_cdf
from .dgp import (Component1Config, Component3Config, default_specs, exact_truth, generate,
                  oracle_overrides, population_quantile, truth_grid)

logger = logging.getLogger(__name__)

QTE_TAUS = (0.02, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.98)
CVAR_TAUS = (0.25, 0.50, 0.75)
SWEEP_RHOS = (0.90, 0.75, 0.60, 0.45, 0.30, 0.20)


def n_workers():
    env = os.environ.get("PROXIDIST_THREADS")
    return max(1, int(env)) if env else 1


def replication_rng(seed, r):
    return np.random.default_rng(np.random.SeedSequence([seed, r]))


def _run(task, reps, seed, n_jobs=None):
    jobs = n_jobs or n_workers()
    if jobs == 1:
        out = [task(r, replication_rng(seed, r)) for r in range(reps)]
    else:
        out = Parallel(n_jobs=jobs)(delayed(task)(r, replication_rng(seed, r)) for r in range(reps))
    return sorted(out, key=lambda d: d["rep"])


def _guarded(fn):
    def task(r, rng):
        try:
            row = fn(rng)
            row.update(rep=r, failed=False)
        except (ProxidistError, np.linalg.LinAlgError) as exc:
            logger.warning("replication %d failed: %s", r, exc)
            row = {"rep": r, "failed": True, "error": str(exc)}
        return row
    return task


def _grid_with(grid, point):
    g = np.unique(np.append(grid, point))
    return g, int(np.searchsorted(g, point))


# ---- Component I -------------------------------------------------------------

def component1_setup(rho=0.75, grid_size=151):
    cfg = Component1Config(rho=rho)
    q1 = population_quantile(cfg, 1, [0.5])[0]
    grid, k_star = _grid_with(truth_grid(cfg, grid_size), q1)
    truth = exact_truth(cfg, grid, (0.5,))
    return cfg, grid, k_star, truth


def component1_replication(cfg, grid, k_star, truth, rng, n_folds=5, n_multipliers=1000,
                           alpha=0.05, ridge_constant=0.01, methods=("PDR", "Naive"),
                           oracle=False):
    """Metrics for one Component I data set."""
    data, _ = generate(cfg, rng)
    folds = make_folds(data.n, n_folds, int(rng.integers(2 ** 31)))
    row = {"n": cfg.n, "rho": cfg.rho}
    true_qte = float(truth.qte[0])
    runs = {}
    if "PDR" in methods:
        sw, sz = default_specs()
        runs["PDR"] = crossfit_cdf(data, sw, sz, SolverConfig(ridge_constant=ridge_constant),
                                   folds=folds, grid=grid)
    if oracle:
        sw, sz = default_specs()
        runs["Oracle"] = crossfit_cdf(data, sw, sz, folds=folds, grid=grid,
                                      **{k: v for k, v in oracle_overrides(cfg, data, grid).items()
                                         if k != "r_override"})
    if "Naive" in methods:
        runs["Naive"] = naive_aipw_cdf(data, grid, folds)
    f_true = truth.cdf[1, k_star]
    for name, est in runs.items():
        lo, hi = pointwise_interval(est, 1, k_star, alpha)
        proj = np.vstack([isotonic_project(est.cdf[a]) for a in (0, 1)])
        qte = float(quantile_from_cdf(grid, proj[1], 0.5)[0] - quantile_from_cdf(grid, proj[0], 0.5)[0])
        row.update({f"{name}_F": est.cdf[1, k_star], f"{name}_F_err": est.cdf[1, k_star] - f_true,
                    f"{name}_pt_cover": float(lo <= f_true <= hi), f"{name}_pt_len": hi - lo,
                    f"{name}_if_sd": float(est.influence[1][:, k_star].std()),
                    f"{name}_qte": qte, f"{name}_qte_err": qte - true_qte})
        if name == "PDR":
            c = multiplier_critical_value(est.influence, n_multipliers, alpha,
                                          seed=int(rng.integers(2 ** 31)))
            band = monotone_envelope(cdf_band(est, c, alpha))
            qb = invert_band(band, [0.5])
            gq = truth.grid_quantile([0.5])
            row.update(PDR_sim_cover=float(band.contains(truth.cdf).all()),
                       PDR_sim_len=float(np.mean(band.width)),
                       PDR_qte_cover=float(qb.qte_contains(gq[1] - gq[0])[0]),
                       PDR_qte_len=float((qb.qte_upper - qb.qte_lower)[0]))
            for key in ("POR", "PIPW"):
                val = getattr(est, key.lower())[1, k_star]
                row[f"{key}_F_err"] = val - f_true
            diag = pd.DataFrame(est.diagnostics)
            per_arm = diag.groupby("arm")
            row["kappa_min"] = float(per_arm["kappa_min_conditional"].mean().min())
            row["dual_norm"] = float(per_arm["dual_l2_norm"].mean().max())
    return row


def coverage_component1(n=2000, reps=300, seed=2024, rho=0.75, n_multipliers=1000, alpha=0.05,
                        grid_size=151, methods=("PDR", "Naive"), oracle=False, n_jobs=None,
                        ridge_constant=0.01):
    cfg, grid, k_star, truth = component1_setup(rho, grid_size)
    cfg = cfg.with_(n=n)

    def one(rng):
        return component1_replication(cfg, grid, k_star, truth, rng, n_multipliers=n_multipliers,
                                      alpha=alpha, methods=methods, oracle=oracle,
                                      ridge_constant=ridge_constant)
    return pd.DataFrame(_run(_guarded(one), reps, seed, n_jobs))


# ---- Component III -----------------------------------------------------------

def component3_setup(grid_size=181, taus=QTE_TAUS, cvar_taus=CVAR_TAUS):
    cfg = Component3Config()
    grid = truth_grid(cfg, grid_size)
    truth = exact_truth(cfg, grid, taus, cvar_taus)
    return cfg, grid, truth


def component3_replication(cfg, grid, truth, rng, n_folds=5, n_multipliers=499, alpha=0.05,
                           ridge_constant=0.01):
    data, _ = generate(cfg, rng)
    folds = make_folds(data.n, n_folds, int(rng.integers(2 ** 31)))
    sw, sz = default_specs()
    est = crossfit_cdf(data, sw, sz, SolverConfig(ridge_constant=ridge_constant), folds=folds,
                       grid=grid, levels=grid)
    c = multiplier_critical_value(est.influence, n_multipliers, alpha,
                                  seed=int(rng.integers(2 ** 31)))
    raw_band = cdf_band(est, c, alpha)
    band = monotone_envelope(raw_band)
    taus = truth.taus
    qb = invert_band(band, taus)
    gq = truth.grid_quantile(taus)
    df_cover = qb.qte_contains(gq[1] - gq[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        estd = estimated_density_delta_band(est, taus, data.y, data.a, alpha=alpha)
        cv = cvar_estimate(est.levels, est.shortfall, est.shortfall_influence, truth.cvar_taus, alpha)
    estd_cover = (estd.lower <= truth.qte) & (truth.qte <= estd.upper)
    cv_cover = (cv.lower <= truth.cvar) & (truth.cvar <= cv.upper)
    viol, ratios = 0, []
    for a in (0, 1):
        proj = isotonic_project(est.cdf[a])
        ok, after, before = nonexpansive(est.cdf[a], proj, truth.cdf[a])
        viol += int(not ok)
        ratios.append(after / before if before > 0 else 1.0)
    return {"n": cfg.n, "cdf_sim_cover": float(raw_band.contains(truth.cdf).all()),
            "cdf_sim_len": float(np.mean(raw_band.width)), "critical_value": c,
            "df_qte_sim_cover": float(df_cover.all()),
            "df_qte_len": float(np.mean(qb.qte_upper - qb.qte_lower)),
            "estd_sim_cover": float(estd_cover.all()),
            "estd_len": float(np.mean(estd.upper - estd.lower)),
            "cvar_cover": float(cv_cover.mean()),
            "cvar_bias": float(np.mean(cv.value - truth.cvar)),
            "iso_violations": viol, "iso_ratio": float(max(ratios))}


def coverage_component3(n=1600, reps=300, seed=2025, n_multipliers=499, alpha=0.05,
                        grid_size=181, n_jobs=None, ridge_constant=0.01):
    cfg, grid, truth = component3_setup(grid_size)
    cfg = cfg.with_(n=n)

    def one(rng):
        return component3_replication(cfg, grid, truth, rng, n_multipliers=n_multipliers,
                                      alpha=alpha, ridge_constant=ridge_constant)
    return pd.DataFrame(_run(_guarded(one), reps, seed, n_jobs))


def coverage_experiment(component, ns, reps, seed=0, **kwargs):
    """Per-replication metrics for every sample size in ``ns``, stacked."""
    runner = {1: coverage_component1, 3: coverage_component3}.get(int(component))
    if runner is None:
        raise ValueError(f"coverage experiments exist for components 1 and 3, not {component}")
    frames = [runner(n=int(n), reps=reps, seed=None if seed is None else seed + i, **kwargs)
              for i, n in enumerate(ns)]
    return pd.concat(frames, ignore_index=True)


def summarize(frame, by="n"):
    """Mean of every metric column plus failure rate, grouped by ``by``."""
    ok = frame[~frame["failed"]]
    num = ok.drop(columns=[c for c in ("rep", "failed", "error") if c in ok]).select_dtypes("number")
    out = num.groupby(ok[by]).mean(numeric_only=True)
    for col in [c for c in out.columns if c.endswith("_err")]:
        out[col.replace("_err", "_rmse")] = np.sqrt((num[col] ** 2).groupby(ok[by]).mean())
    out["failure_rate"] = frame.groupby(by)["failed"].mean()
    out["reps"] = frame.groupby(by)["failed"].size()
    return out.drop(columns=[by], errors="ignore").reset_index()


# ---- weak-proxy sweep --------------------------------------------------------

def weak_proxy_sweep(rhos=SWEEP_RHOS, n=4000, reps=200, seed=7, n_multipliers=499,
                     grid_size=161, ridge_constant=1e-5, alpha=0.05, n_jobs=None):
    """Diagnostics table over proxy relevance (one row per ``rho``)."""
    rows, raw = [], []
    for i, rho in enumerate(rhos):
        t0 = time.perf_counter()
        frame = coverage_component1(n=n, reps=reps, seed=seed + i, rho=rho,
                                    n_multipliers=n_multipliers, alpha=alpha,
                                    grid_size=grid_size, methods=("PDR",), n_jobs=n_jobs,
                                    ridge_constant=ridge_constant)
        frame["rho"] = rho
        raw.append(frame)
        ok = frame[~frame["failed"]]
        rows.append({"rho": rho, "kappa_min": ok["kappa_min"].mean(),
                     "dual_norm": ok["dual_norm"].mean(), "if_sd": ok["PDR_if_sd"].mean(),
                     "cdf_bias": ok["PDR_F_err"].mean(),
                     "cdf_rmse": float(np.sqrt(np.mean(ok["PDR_F_err"] ** 2))),
                     "pt_cover": ok["PDR_pt_cover"].mean(), "pt_len": ok["PDR_pt_len"].mean(),
                     "sim_cover": ok["PDR_sim_cover"].mean(), "sim_len": ok["PDR_sim_len"].mean(),
                     "qte_rmse": float(np.sqrt(np.mean(ok["PDR_qte_err"] ** 2))),
                     "qte_len": ok["PDR_qte_len"].mean(),
                     "failure_rate": frame["failed"].mean(), "seconds": time.perf_counter() - t0})
    return pd.DataFrame(rows), pd.concat(raw, ignore_index=True)
