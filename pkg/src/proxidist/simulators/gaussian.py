"""Gaussian sequence benchmark for the regular / boundary / nonregular Picard regimes."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .._validation import ConfigError
from ..bridge import picard_partial_sums

logger = logging.getLogger(__name__)

DEFAULT_NS = (500, 1000, 2000, 4000, 8000, 16000, 32000)
REGIMES = {"regular": 1.8, "boundary": 1.5, "nonregular": 0.8}


@dataclass(frozen=True)
class GaussBenchConfig:
    """Spectrum ``s_j = j**-alpha``, loadings ``l_j = j**-rho_l``, signal ``R_beta j**(-beta-1/2)``."""

    alpha: float = 1.0
    beta: float = 1.0
    rho_l: float = 1.8
    J: int = 400
    R_beta: float = 1.0
    ns: tuple = DEFAULT_NS
    reps: int = 3000
    truncation: str = "oracle"
    m_fixed: int | None = None
    seed: int | None = 0

    def __post_init__(self):
        if self.truncation not in ("oracle", "fixed"):
            raise ConfigError("truncation must be 'oracle' or 'fixed'")
        if self.truncation == "fixed" and not self.m_fixed:
            raise ConfigError("fixed truncation needs m_fixed")
        if self.J < 1 or self.reps < 1:
            raise ConfigError("J and reps must be positive")

    def sequences(self):
        j = np.arange(1, self.J + 1, dtype=float)
        return j ** -self.alpha, j ** -self.rho_l, self.R_beta * j ** (-self.beta - 0.5)

    def polynomial_exponent(self):
        """``min(1, (2 beta + 2 rho_l - 1) / (2 alpha + 2 beta))``."""
        return min(1.0, (2 * self.beta + 2 * self.rho_l - 1) / (2 * self.alpha + 2 * self.beta))

    def picard_status(self):
        edge = self.alpha + 0.5
        if np.isclose(self.rho_l, edge):
            return "log-divergent"
        return "finite" if self.rho_l > edge else "poly-divergent"

    def to_dict(self):
        d = asdict(self)
        d["ns"] = list(self.ns)
        return d


def oracle_risk(cfg, n):
    """Closed-form squared bias, variance and MSE of ``L_m`` for ``m = 1..J``."""
    s, l, theta = cfg.sequences()
    tail = np.cumsum((l * theta)[::-1])[::-1]
    bias = np.append(tail[1:], 0.0)
    var = np.cumsum(l ** 2 / s ** 2) / n
    return bias, var, bias ** 2 + var


def oracle_truncation(cfg, n):
    if cfg.truncation == "fixed":
        return int(cfg.m_fixed)
    return int(np.argmin(oracle_risk(cfg, n)[2])) + 1


def simulate_truncated(cfg, n, m, rng):
    """Monte Carlo draws of ``L_m = sum_{j<=m} (l_j / s_j) X_j``."""
    s, l, theta = cfg.sequences()
    xi = rng.standard_normal((cfg.reps, m))
    X = s[:m] * theta[:m] + xi / np.sqrt(n)
    return X @ (l[:m] / s[:m])


def gaussian_bench(cfg):
    """Per-sample-size table and fitted MSE exponent for one regime.

    Returns ``{"rows": [...], "exponent": float, "picard": array}``; each
    row has ``n, m_star, bias, variance, mse`` (Monte Carlo) plus the
    closed-form variance for the chosen truncation.
    """
    s, l, theta = cfg.sequences()
    target = float(l @ theta)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.ns))
    rows = []
    for n, ss in zip(cfg.ns, seeds):
        m = oracle_truncation(cfg, n)
        est = simulate_truncated(cfg, n, m, np.random.default_rng(ss))
        err = est - target
        rows.append({"n": int(n), "m_star": m, "bias": float(abs(err.mean())),
                     "variance": float(est.var(ddof=1)), "mse": float(np.mean(err ** 2)),
                     "variance_exact": float(oracle_risk(cfg, n)[1][m - 1])})
    logn = np.log([r["n"] for r in rows])
    logmse = np.log([r["mse"] for r in rows])
    slope = np.polyfit(logn, logmse, 1)[0] if len(rows) > 1 else np.nan
    return {"rows": rows, "exponent": float(-slope), "picard": picard_partial_sums(s, l),
            "config": cfg.to_dict(), "polynomial_exponent": cfg.polynomial_exponent(),
            "picard_status": cfg.picard_status()}


def gaussian_bench_regimes(reps=3000, ns=DEFAULT_NS, seed=0, J=400, R_beta=1.0, regimes=None):
    """Run every regime; each gets its own seed stream."""
    regimes = regimes or REGIMES
    out = {}
    for k, (name, rho_l) in enumerate(regimes.items()):
        cfg = GaussBenchConfig(rho_l=rho_l, J=J, R_beta=R_beta, ns=tuple(ns), reps=reps,
                               seed=None if seed is None else [seed, k])
        out[name] = gaussian_bench(cfg)
    return out
