"""Exact finite-rank proximal designs with binary latent confounder and proxies.

Both designs share the latent/proxy/treatment layer; they differ in the
outcome noise (Gaussian for the calibration design, a three-component
Gaussian mixture for the density-stress design). Because every variable
except the noise is binary, population CDFs, densities, shortfalls and the
true bridges are computed exactly by enumerating cells.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit
from scipy.stats import norm

from .._validation import ConfigError
from ..basis import BasisSpec
from ..data import Dataset


@dataclass(frozen=True)
class Component1Config:
    """Calibration design; ``rho`` scales how strongly both proxies track ``U``."""

    rho: float = 0.75
    n: int = 2000
    seed: int | None = None
    sigma_coef: tuple = (0.70, 0.10, 0.05)

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ConfigError("rho must lie in (0, 1]")
        if self.n < 1:
            raise ConfigError("n must be positive")

    def noise_components(self):
        return np.array([1.0]), np.array([0.0]), np.array([1.0])

    def with_(self, **kw):
        return type(self)(**{**self.__dict__, **kw})


@dataclass(frozen=True)
class Component3Config(Component1Config):
    """Density-stress design with mixture noise ``d_r + sigma(X) s_r N(0, 1)``."""

    rho: float = 0.75
    n: int = 1600
    sigma_coef: tuple = (0.62, 0.09, 0.05)
    probs: tuple = (0.45, 0.35, 0.20)
    offsets: tuple = (-0.58, 0.05, 1.48)
    scales: tuple = (0.08, 0.35, 0.07)

    def __post_init__(self):
        super().__post_init__()
        if not np.isclose(sum(self.probs), 1.0):
            raise ConfigError("mixture probabilities must sum to one")
        if not len(self.probs) == len(self.offsets) == len(self.scales):
            raise ConfigError("mixture parameters must have equal lengths")

    def noise_components(self):
        return np.asarray(self.probs), np.asarray(self.offsets), np.asarray(self.scales)


def p_u(x1, x2):
    return expit(-0.25 + 0.55 * x1 - 0.35 * x2)


def p_z(u, x1, x2, rho):
    return expit(-0.15 + 2.2 * rho * (2 * u - 1) + 0.25 * x1 - 0.15 * x2)


def p_w(u, x1, x2, rho):
    return expit(0.10 + 2.2 * rho * (2 * u - 1) - 0.20 * x1 + 0.20 * x2)


def p_a(u, z, x1, x2):
    return expit(-0.20 + 0.80 * (2 * u - 1) + 0.45 * z + 0.25 * x1 - 0.20 * x2)


def outcome_mean(a, x1, x2, u, w):
    return 0.35 * a + 0.35 * x1 - 0.25 * x2 + 0.75 * u + 0.25 * w + 0.20 * a * u + 0.15 * a * x1


def sigma_x(cfg, x1, x2):
    c0, c1, c2 = cfg.sigma_coef
    return c0 + c1 * x1 + c2 * x2


def _bern(p, v):
    return np.where(v == 1, p, 1 - p)


# ---- noise functionals -------------------------------------------------------

def _components(cfg, sig):
    probs, offs, scales = cfg.noise_components()
    return probs, offs, np.multiply.outer(np.asarray(sig, float), scales)


def noise_cdf(cfg, e, sig):
    """``P(eps <= e | sigma(X) = sig)``; broadcasts over ``e`` and ``sig``."""
    e = np.asarray(e, float)
    probs, offs, sd = _components(cfg, sig)
    out = 0.0
    for r, p in enumerate(probs):
        s = sd[..., r]
        dev = e - offs[r]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(s > 0, norm.cdf(dev / np.where(s > 0, s, 1.0)), (dev >= 0).astype(float))
        out = out + p * val
    return out


def noise_pdf(cfg, e, sig):
    e = np.asarray(e, float)
    probs, offs, sd = _components(cfg, sig)
    out = 0.0
    for r, p in enumerate(probs):
        s = sd[..., r]
        out = out + p * norm.pdf((e - offs[r]) / s) / s
    return out


def noise_shortfall(cfg, t, sig):
    """``E(t - eps)_+`` in closed form for each Gaussian component."""
    t = np.asarray(t, float)
    probs, offs, sd = _components(cfg, sig)
    out = 0.0
    for r, p in enumerate(probs):
        s = sd[..., r]
        dev = t - offs[r]
        safe = np.where(s > 0, s, 1.0)
        d = dev / safe
        val = np.where(s > 0, dev * norm.cdf(d) + safe * norm.pdf(d), np.maximum(dev, 0.0))
        out = out + p * val
    return out


def sample_noise(cfg, rng, sig):
    probs, offs, scales = cfg.noise_components()
    lab = rng.choice(len(probs), size=np.shape(sig), p=probs)
    return offs[lab] + sig * scales[lab] * rng.standard_normal(np.shape(sig))


# ---- generation --------------------------------------------------------------

def generate(cfg, rng=None):
    """Draw ``cfg.n`` rows. Returns ``(Dataset, oracle)``.

    ``oracle`` holds the latent ``u`` and both potential outcomes; it is
    never part of the analyst-visible dataset.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n = cfg.n
    x1 = rng.integers(0, 2, n).astype(float)
    x2 = rng.integers(0, 2, n).astype(float)
    u = (rng.random(n) < p_u(x1, x2)).astype(float)
    z = (rng.random(n) < p_z(u, x1, x2, cfg.rho)).astype(float)
    w = (rng.random(n) < p_w(u, x1, x2, cfg.rho)).astype(float)
    a = (rng.random(n) < p_a(u, z, x1, x2)).astype(np.int8)
    sig = sigma_x(cfg, x1, x2)
    y0 = outcome_mean(0, x1, x2, u, w) + sample_noise(cfg, rng, sig)
    y1 = outcome_mean(1, x1, x2, u, w) + sample_noise(cfg, rng, sig)
    y = np.where(a == 1, y1, y0)
    data = Dataset(y=y, a=a, z=z[:, None], w=w[:, None], x=np.column_stack([x1, x2]),
                   z_names=("z",), w_names=("w",), x_names=("x1", "x2"))
    return data, {"u": u, "y0": y0, "y1": y1}


def default_specs(degree=3):
    """Degree-three polynomial bases in ``(W, X)`` and ``(Z, X)``."""
    return (BasisSpec(kind="polynomial", side="w", degree=degree),
            BasisSpec(kind="polynomial", side="z", degree=degree))


# ---- exact population quantities ---------------------------------------------

def cells(cfg):
    """Every ``(x1, x2, u, z, w, a)`` combination with its probability."""
    grid = np.array(list(itertools.product((0.0, 1.0), repeat=6)))
    x1, x2, u, z, w, a = grid.T
    prob = (0.25 * _bern(p_u(x1, x2), u) * _bern(p_z(u, x1, x2, cfg.rho), z)
            * _bern(p_w(u, x1, x2, cfg.rho), w) * _bern(p_a(u, z, x1, x2), a))
    return {"x1": x1, "x2": x2, "u": u, "z": z, "w": w, "a": a, "prob": prob}


def _outcome_cells(cfg):
    # (x1, x2, u, w) cells with P(x, u, w); the outcome law does not depend on z or a
    grid = np.array(list(itertools.product((0.0, 1.0), repeat=4)))
    x1, x2, u, w = grid.T
    prob = 0.25 * _bern(p_u(x1, x2), u) * _bern(p_w(u, x1, x2, cfg.rho), w)
    return x1, x2, u, w, prob


def population_cdf(cfg, arm, y):
    x1, x2, u, w, prob = _outcome_cells(cfg)
    y = np.atleast_1d(np.asarray(y, float))
    e = y[:, None] - outcome_mean(arm, x1, x2, u, w)[None, :]
    return noise_cdf(cfg, e, sigma_x(cfg, x1, x2)[None, :]) @ prob


def population_density(cfg, arm, y):
    x1, x2, u, w, prob = _outcome_cells(cfg)
    y = np.atleast_1d(np.asarray(y, float))
    e = y[:, None] - outcome_mean(arm, x1, x2, u, w)[None, :]
    return noise_pdf(cfg, e, sigma_x(cfg, x1, x2)[None, :]) @ prob


def population_shortfall(cfg, arm, t):
    x1, x2, u, w, prob = _outcome_cells(cfg)
    t = np.atleast_1d(np.asarray(t, float))
    e = t[:, None] - outcome_mean(arm, x1, x2, u, w)[None, :]
    return noise_shortfall(cfg, e, sigma_x(cfg, x1, x2)[None, :]) @ prob


def population_quantile(cfg, arm, taus):
    out = []
    for tau in np.atleast_1d(taus):
        lo, hi = -10.0, 12.0
        out.append(brentq(lambda v: population_cdf(cfg, arm, v)[0] - tau, lo, hi, xtol=1e-12))
    return np.array(out)


def population_cvar(cfg, arm, taus):
    """``C(tau) = Q(tau) - S(Q(tau)) / tau`` (the maximizer of ``t - S(t)/tau``)."""
    taus = np.atleast_1d(np.asarray(taus, float))
    q = population_quantile(cfg, arm, taus)
    return q - population_shortfall(cfg, arm, q) / taus


@dataclass
class TruthTable:
    """Per-arm counterfactual truth on a grid (rows are arms)."""

    grid: np.ndarray
    cdf: np.ndarray
    taus: np.ndarray
    quantile: np.ndarray
    cvar_taus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cvar: np.ndarray = field(default_factory=lambda: np.zeros((2, 0)))
    n_truth: int | None = None
    seed: int | None = None

    @property
    def qte(self):
        return self.quantile[1] - self.quantile[0]

    def grid_quantile(self, taus=None):
        """``inf{grid y: F(y) >= tau}`` from the tabulated truth."""
        from ..estimator import quantile_from_cdf
        taus = self.taus if taus is None else taus
        return np.vstack([quantile_from_cdf(self.grid, self.cdf[a], taus) for a in (0, 1)])


def exact_truth(cfg, grid, taus, cvar_taus=()):
    """Truth table from cell enumeration (no Monte Carlo error)."""
    grid = np.asarray(grid, float)
    taus = np.asarray(taus, float)
    ct = np.asarray(cvar_taus, float)
    return TruthTable(grid=grid, cdf=np.vstack([population_cdf(cfg, a, grid) for a in (0, 1)]),
                      taus=taus, quantile=np.vstack([population_quantile(cfg, a, taus) for a in (0, 1)]),
                      cvar_taus=ct,
                      cvar=np.vstack([population_cvar(cfg, a, ct) for a in (0, 1)]) if ct.size
                      else np.zeros((2, 0)))


def potential_outcome_draws(cfg, n_truth, seed=None):
    big = cfg.with_(n=n_truth)
    _, oracle = generate(big, np.random.default_rng(seed))
    return oracle["y0"], oracle["y1"]


def empirical_truth(draws, grid, taus, cvar_taus=()):
    """CDF, quantiles and lower-tail CVaR of potential-outcome draws, per arm.

    CVaR is the mean of the lowest ``ceil(tau N)`` draws.
    """
    grid = np.asarray(grid, float)
    taus = np.asarray(taus, float)
    ct = np.asarray(cvar_taus, float)
    cdf, quant, cvar = [], [], []
    for d in draws:
        s = np.sort(np.asarray(d, float))
        N = s.size
        cdf.append(np.searchsorted(s, grid, side="right") / N)
        quant.append(s[np.maximum(np.ceil(taus * N).astype(int) - 1, 0)])
        csum = np.cumsum(s)
        cvar.append(np.array([csum[int(np.ceil(t * N)) - 1] / np.ceil(t * N) for t in ct]))
    return TruthTable(grid=grid, cdf=np.vstack(cdf), taus=taus, quantile=np.vstack(quant),
                      cvar_taus=ct, cvar=np.vstack(cvar) if ct.size else np.zeros((2, 0)),
                      n_truth=int(np.asarray(draws[0]).size))


def truth_oracle(cfg, grid, taus, n_truth=5_000_000, seed=None, cvar_taus=()):
    """Monte Carlo truth table from ``n_truth`` potential-outcome draws."""
    if n_truth < 10_000:
        raise ConfigError("n_truth must be at least 1e4")
    table = empirical_truth(potential_outcome_draws(cfg, n_truth, seed), grid, taus, cvar_taus)
    table.seed = seed
    return table


def truth_grid(cfg, size, lower=0.005, upper=0.995):
    """``size`` points spanning pooled counterfactual quantiles ``lower .. upper``."""
    lo = min(population_quantile(cfg, a, [lower])[0] for a in (0, 1))
    hi = max(population_quantile(cfg, a, [upper])[0] for a in (0, 1))
    return np.linspace(lo, hi, size)


# ---- true bridges ------------------------------------------------------------

class TrueBridges:
    """Population outcome, shortfall and treatment bridges for one arm.

    For each covariate cell the bridge equations reduce to a 2 x 2 system in
    the binary proxy, solved exactly.
    """

    def __init__(self, cfg, arm):
        self.cfg = cfg
        self.arm = arm
        c = cells(cfg)
        self._c = c
        self._M = {}
        self._q = {}
        for x1, x2 in itertools.product((0.0, 1.0), repeat=2):
            M = np.zeros((2, 2))
            pw = np.zeros(2)
            sel = (c["x1"] == x1) & (c["x2"] == x2)
            for zi in (0, 1):
                for wi in (0, 1):
                    m = sel & (c["z"] == zi) & (c["w"] == wi)
                    M[zi, wi] = c["prob"][m & (c["a"] == arm)].sum()
                    pw[wi] += c["prob"][m].sum()
            self._M[(x1, x2)] = M
            self._q[(x1, x2)] = np.linalg.solve(M.T, pw)

    def _rhs(self, fn):
        # E[1(A=a) fn(Y) 1(Z=z) | x] tabulated over z, for each covariate cell
        c = self._c
        out = {}
        for key in self._M:
            sel = (c["x1"] == key[0]) & (c["x2"] == key[1]) & (c["a"] == self.arm)
            g = []
            for zi in (0, 1):
                m = sel & (c["z"] == zi)
                vals = fn(outcome_mean(self.arm, c["x1"][m], c["x2"][m], c["u"][m], c["w"][m]),
                          sigma_x(self.cfg, c["x1"][m], c["x2"][m]))
                g.append(c["prob"][m] @ vals)
            out[key] = np.array(g)
        return out

    def _primal(self, fn):
        rhs = self._rhs(fn)
        return {k: np.linalg.solve(self._M[k], rhs[k]) for k in self._M}

    def h_table(self, grid):
        grid = np.asarray(grid, float)
        return self._primal(lambda mu, s: noise_cdf(self.cfg, grid[None, :] - mu[:, None], s[:, None]))

    def r_table(self, levels):
        levels = np.asarray(levels, float)
        return self._primal(lambda mu, s: noise_shortfall(self.cfg, levels[None, :] - mu[:, None], s[:, None]))

    def q_values(self, z, x):
        z = np.asarray(z).ravel()
        return np.array([self._q[(xi[0], xi[1])][int(zi)] for zi, xi in zip(z, x)])

    @staticmethod
    def lookup(table, w, x):
        w = np.asarray(w).ravel()
        return np.vstack([table[(xi[0], xi[1])][int(wi)] for wi, xi in zip(w, x)])


def oracle_overrides(cfg, data, grid, levels=None):
    """``h_override`` / ``q_override`` / ``r_override`` hooks using the true bridges."""
    bridges = {a: TrueBridges(cfg, a) for a in (0, 1)}
    h_tab = {a: bridges[a].h_table(grid) for a in (0, 1)}
    r_tab = {a: bridges[a].r_table(levels) for a in (0, 1)} if levels is not None else None

    def h_override(arm, rows, _grid):
        return TrueBridges.lookup(h_tab[arm], data.w[rows], data.x[rows])

    def q_override(arm, rows):
        return bridges[arm].q_values(data.z[rows], data.x[rows])

    def r_override(arm, rows, _levels):
        return TrueBridges.lookup(r_tab[arm], data.w[rows], data.x[rows])

    return {"h_override": h_override, "q_override": q_override,
            "r_override": r_override if r_tab is not None else None}
