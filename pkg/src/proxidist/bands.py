"""Simultaneous CDF bands, isotonic projection and density-free quantile bands."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from ._validation import InputError, as_1d, check_random_state

logger = logging.getLogger(__name__)

LAWS = ("rademacher", "gaussian")


def pava(values, weights=None):
    """Weighted least-squares projection onto nondecreasing sequences.

    Classic pool-adjacent-violators with a block stack: each new point is
    merged backwards while it violates the order of the previous block.
    """
    v = as_1d(values, "values")
    w = np.ones_like(v) if weights is None else as_1d(weights, "weights")
    if w.shape != v.shape:
        raise InputError("values and weights must have the same length")
    if np.any(w <= 0):
        raise InputError("weights must be positive")
    means, wsum, counts = [], [], []
    for vi, wi in zip(v, w):
        m, s, c = vi, wi, 1
        while means and means[-1] > m:
            pm, ps, pc = means.pop(), wsum.pop(), counts.pop()
            m = (pm * ps + m * s) / (ps + s)
            s += ps
            c += pc
        means.append(m)
        wsum.append(s)
        counts.append(c)
    return np.repeat(means, counts)


def isotonic_project(values, weights=None):
    """Projection onto ``{0 <= v_1 <= ... <= v_K <= 1}``: PAVA, then clip."""
    return np.clip(pava(values, weights), 0.0, 1.0)


def draw_multipliers(n_draws, n, seed=None, law="rademacher"):
    rng = check_random_state(seed)
    if law == "rademacher":
        return rng.choice(np.array([-1.0, 1.0]), size=(n_draws, n))
    if law == "gaussian":
        return rng.standard_normal((n_draws, n))
    raise InputError(f"unknown multiplier law {law!r}; choose from {LAWS}")


def multiplier_sup_stats(influence, multipliers, chunk=256):
    """``max_a sup_k |n^-1/2 sum_i xi_i phi_a(O_i, y_k)|`` for each row of ``multipliers``."""
    mats = [np.asarray(m, float) for m in influence]
    n = mats[0].shape[0]
    if any(m.shape[0] != n for m in mats):
        raise InputError("influence matrices must share the row count")
    xi = np.asarray(multipliers, float)
    if xi.ndim != 2 or xi.shape[1] != n:
        raise InputError("multipliers must be an M x n array")
    stats = np.zeros(xi.shape[0])
    for start in range(0, xi.shape[0], chunk):
        block = xi[start:start + chunk]
        for m in mats:
            if m.shape[1]:
                stats[start:start + chunk] = np.maximum(
                    stats[start:start + chunk], np.abs(block @ m).max(axis=1))
    return stats / np.sqrt(n)


def multiplier_critical_value(influence, n_draws=1000, alpha=0.05, seed=None,
                              law="rademacher", multipliers=None):
    """Empirical ``1 - alpha`` quantile of the multiplier sup statistic.

    ``influence`` is a sequence of ``n x K`` matrices (one per arm). Pass
    ``multipliers`` (``M x n``) to use fixed draws instead of sampling.
    """
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    n = np.asarray(influence[0]).shape[0]
    if multipliers is None:
        if n_draws < 1:
            raise InputError("need at least one multiplier draw")
        multipliers = draw_multipliers(n_draws, n, seed, law)
    stats = multiplier_sup_stats(influence, multipliers)
    return float(np.quantile(stats, 1 - alpha, method="inverted_cdf"))


@dataclass
class BandSet:
    """Per-arm simultaneous CDF band on a grid (rows are arms)."""

    grid: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    critical_value: float
    alpha: float
    n: int
    n_multipliers: int | None = None
    law: str = "rademacher"
    envelope: bool = False

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, curves):
        curves = np.atleast_2d(curves)
        return np.all((self.lower <= curves) & (curves <= self.upper), axis=1)


def cdf_band(estimate, critical_value, alpha=0.05, n_multipliers=None, law="rademacher"):
    """``[max(0, F - c/sqrt(n)), min(1, F + c/sqrt(n))]`` for each arm."""
    if critical_value < 0:
        raise InputError("critical value must be nonnegative")
    F = np.atleast_2d(estimate.cdf)
    half = critical_value / np.sqrt(estimate.n)
    return BandSet(grid=estimate.grid, estimate=F, lower=np.maximum(0.0, F - half),
                   upper=np.minimum(1.0, F + half), critical_value=float(critical_value),
                   alpha=alpha, n=estimate.n, n_multipliers=n_multipliers, law=law)


def monotone_envelope(band):
    """Running maxima of both band edges."""
    return replace(band, lower=np.maximum.accumulate(band.lower, axis=-1),
                   upper=np.maximum.accumulate(band.upper, axis=-1), envelope=True)


def first_crossing(grid, curve, taus, empty=None):
    """``inf{y in grid: curve(y) >= tau}``; ``empty`` (default ``grid[-1]``) if none."""
    grid = np.asarray(grid, float)
    curve = np.asarray(curve, float)
    taus = np.atleast_1d(np.asarray(taus, float))
    hit = curve[None, :] >= taus[:, None]
    fallback = grid[-1] if empty is None else empty
    return np.where(hit.any(axis=1), grid[hit.argmax(axis=1)], fallback)


@dataclass
class QuantileBands:
    """Per-arm quantile bands (rows are arms) and the cross-differenced QTE band."""

    taus: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def qte_lower(self):
        return self.lower[1] - self.upper[0]

    @property
    def qte_upper(self):
        return self.upper[1] - self.lower[0]

    def qte_contains(self, qte):
        return (self.qte_lower <= qte) & (qte <= self.qte_upper)


def invert_band(band, taus):
    """Density-free quantile bands: ``Q^L`` from the upper edge, ``Q^U`` from the lower edge."""
    taus = np.atleast_1d(np.asarray(taus, float))
    lo = np.vstack([first_crossing(band.grid, u, taus) for u in np.atleast_2d(band.upper)])
    hi = np.vstack([first_crossing(band.grid, l, taus) for l in np.atleast_2d(band.lower)])
    return QuantileBands(taus=taus, lower=lo, upper=hi)


def pointwise_interval(estimate, arm, index, alpha=0.05):
    """Wald interval for ``F_a`` at grid position ``index``, clipped to ``[0, 1]``."""
    z = norm.ppf(1 - alpha / 2)
    F = estimate.cdf[arm, index]
    se = estimate.influence[arm][:, index].std() / np.sqrt(estimate.n)
    return max(0.0, F - z * se), min(1.0, F + z * se)


def silverman_bandwidth(sample):
    x = as_1d(sample, "sample")
    iqr = np.subtract(*np.quantile(x, [0.75, 0.25]))
    spread = min(x.std(ddof=1), iqr / 1.34) if iqr > 0 else x.std(ddof=1)
    return 1.06 * spread * x.size ** (-0.2)


def cdf_kernel_density(grid, cdf, points, bandwidth):
    """Gaussian-kernel smoothing of CDF increments placed at cell midpoints.

    Tail mass outside the grid is ignored.
    """
    grid = np.asarray(grid, float)
    mass = np.diff(np.asarray(cdf, float))
    mid = 0.5 * (grid[1:] + grid[:-1])
    pts = np.atleast_1d(np.asarray(points, float))
    return norm.pdf((pts[:, None] - mid[None, :]) / bandwidth) @ mass / bandwidth


@dataclass
class DeltaQteIntervals:
    taus: np.ndarray
    qte: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    density: np.ndarray
    bandwidth: np.ndarray
    floored: np.ndarray


def estimated_density_delta_band(estimate, taus, y=None, a=None, bandwidth=None, alpha=0.05,
                                 floor=1e-3, bonferroni=True):
    """QTE intervals from the delta method with a kernel density at each quantile.

    The bandwidth is Silverman's rule on the observed arm outcomes (``y``,
    ``a``) unless given; the level is Bonferroni-adjusted over ``taus``.
    """
    taus = np.atleast_1d(np.asarray(taus, float))
    grid = estimate.grid
    proj = np.vstack([isotonic_project(estimate.cdf[arm]) for arm in (0, 1)])
    if bandwidth is None:
        if y is None or a is None:
            raise InputError("need outcomes and treatments for the bandwidth rule")
        bw = np.array([silverman_bandwidth(np.asarray(y)[np.asarray(a) == arm]) for arm in (0, 1)])
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, float), (2,)).copy()
    q = np.vstack([first_crossing(grid, proj[arm], taus) for arm in (0, 1)])
    idx = np.searchsorted(grid, q)
    dens = np.vstack([cdf_kernel_density(grid, proj[arm], q[arm], bw[arm]) for arm in (0, 1)])
    var = np.vstack([estimate.influence[arm][:, idx[arm]].var(axis=0) for arm in (0, 1)])
    floored = np.any(dens < floor, axis=0)
    safe = np.maximum(dens, floor)
    se = np.sqrt((var[0] / safe[0] ** 2 + var[1] / safe[1] ** 2) / estimate.n)
    level = alpha / taus.size if bonferroni else alpha
    z = norm.ppf(1 - level / 2)
    qte = q[1] - q[0]
    lower = qte - z * se
    upper = qte + z * se
    if floored.any():
        warnings.warn("estimated density below floor; interval widened to the grid range",
                      RuntimeWarning, stacklevel=2)
        span = grid[-1] - grid[0]
        lower = np.where(floored, -span, lower)
        upper = np.where(floored, span, upper)
    return DeltaQteIntervals(taus=taus, qte=qte, lower=lower, upper=upper, density=dens,
                             bandwidth=bw, floored=floored)


def nonexpansive(raw, projected, target, weights=None):
    """Whether projecting moved the curve no further from a monotone ``target``."""
    w = 1.0 if weights is None else np.asarray(weights, float)
    before = np.sum(w * (np.asarray(raw) - target) ** 2)
    after = np.sum(w * (np.asarray(projected) - target) ** 2)
    return after <= before * (1 + 1e-12) + 1e-15, after, before
