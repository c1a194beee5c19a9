"""Cross-fitted one-step estimation of counterfactual CDF and shortfall processes."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.linear_model import LogisticRegression
from sklearn.utils.validation import check_is_fitted

from ._validation import InputError, NumericalError, check_grid
from .basis import BasisSpec, FoldStandardizer, fit_basis
from .bridge import SolverConfig, assemble_moments, spectral_diagnostics

logger = logging.getLogger(__name__)

ARMS = (0, 1)


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    fold_ids: np.ndarray
    seed: int | None = None

    def rows(self, k):
        return np.flatnonzero(self.fold_ids == k)

    def sizes(self):
        return np.bincount(self.fold_ids, minlength=self.n_folds)


def make_folds(n, n_folds, seed=None):
    """Seeded shuffle followed by round-robin fold assignment."""
    if n_folds < 2:
        raise InputError("need at least 2 folds")
    if n_folds > n:
        raise InputError(f"cannot split {n} rows into {n_folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % n_folds
    return FoldPlan(n_folds=n_folds, fold_ids=ids, seed=seed)


def default_grid(y, size=61, lower=0.02, upper=0.98):
    """``size`` empirical quantiles of ``y`` between two percentiles (ties merged)."""
    g = np.unique(np.quantile(np.asarray(y, float), np.linspace(lower, upper, size)))
    return g


@dataclass
class CdfProcessEstimate:
    """One-step CDF (and optional shortfall) process for both arms.

    ``cdf[a, k]`` is the estimate at ``grid[k]``; ``influence[a]`` is the
    ``n x K`` matrix of centered fold-specific scores. ``por`` and ``pipw``
    hold the one-bridge curves computed from the same fold nuisances.
    """

    grid: np.ndarray
    cdf: np.ndarray
    influence: tuple
    por: np.ndarray | None = None
    pipw: np.ndarray | None = None
    levels: np.ndarray | None = None
    shortfall: np.ndarray | None = None
    shortfall_influence: tuple | None = None
    diagnostics: list = field(default_factory=list)
    method: str = "PDR"

    @property
    def n(self):
        return self.influence[0].shape[0]

    def if_sd(self, arm):
        return self.influence[arm].std(axis=0)


def one_step_scores(h, q, treated, outcome):
    """``h + 1(A=a) q (B - h)`` with ``B`` the indicator or shortfall matrix."""
    return h + (treated * q)[:, None] * (outcome - h)


def _fold_features(spec, data, train):
    raw = fit_basis(spec, data, train).transform(spec.block(data))
    scaler = FoldStandardizer().fit(raw[train])
    return scaler.transform(raw)


def crossfit_cdf(data, spec_w, spec_z, solver=None, folds=None, grid=None, levels=None,
                 h_override=None, q_override=None, r_override=None, seed=None, n_folds=5):
    """Cross-fitted one-step CDF process (and shortfall process on ``levels``).

    Bridges are fitted on the complement of each fold, with fold-specific
    standardization of the basis columns, and evaluated on the fold.
    ``h_override(arm, rows, grid)`` / ``q_override(arm, rows)`` /
    ``r_override(arm, rows, levels)`` replace the fitted nuisances on the
    evaluation rows (oracle and forced-nuisance runs).
    """
    solver = solver or SolverConfig()
    folds = folds or make_folds(data.n, n_folds, seed)
    grid = check_grid(grid if grid is not None else default_grid(data.y), "grid")
    levels = None if levels is None else check_grid(levels, "levels")
    n, K = data.n, grid.size
    L = 0 if levels is None else levels.size
    B = (data.y[:, None] <= grid[None, :]).astype(float)
    P = np.maximum(levels[None, :] - data.y[:, None], 0.0) if L else None

    score = np.zeros((2, n, K))
    por = np.zeros((2, n, K))
    pipw = np.zeros((2, n, K))
    sscore = np.zeros((2, n, L))
    diagnostics = []
    for k in range(folds.n_folds):
        test = folds.fold_ids == k
        train = ~test
        counts = np.bincount(data.a[train], minlength=2)
        if np.any(counts == 0):
            raise InputError(f"empty arm in the training complement of fold {k}")
        bW = _fold_features(spec_w, data, train)
        bZ = _fold_features(spec_z, data, train)
        rows = np.flatnonzero(test)
        for arm in ARMS:
            ms = assemble_moments(arm, bW[train], bZ[train], data.y[train], data.a[train],
                                  grid, levels if L else ())
            try:
                fit = solver.solve(ms, n=n)
            except NumericalError as exc:
                raise type(exc)(f"fold {k}, arm {arm}: {exc}") from exc
            diag = spectral_diagnostics(ms, fit, bZ[train], data.a[train])
            diagnostics.append({"fold": k, "arm": arm, **diag.to_dict()})
            h = fit.h(bW[test]) if h_override is None else h_override(arm, rows, grid)
            q = fit.q(bZ[test]) if q_override is None else q_override(arm, rows)
            treated = (data.a[test] == arm).astype(float)
            score[arm, test] = one_step_scores(h, q, treated, B[test])
            por[arm, test] = h
            pipw[arm, test] = (treated * q)[:, None] * B[test]
            if L:
                r = fit.r(bW[test]) if r_override is None else r_override(arm, rows, levels)
                sscore[arm, test] = one_step_scores(r, q, treated, P[test])
    cdf = score.mean(axis=1)
    influence = tuple(score[a] - cdf[a] for a in ARMS)
    est = CdfProcessEstimate(grid=grid, cdf=cdf, influence=influence,
                             por=por.mean(axis=1), pipw=pipw.mean(axis=1),
                             diagnostics=diagnostics)
    if L:
        est.levels = levels
        est.shortfall = sscore.mean(axis=1)
        est.shortfall_influence = tuple(sscore[a] - est.shortfall[a] for a in ARMS)
    return est


def shortfall_process(data, spec_w, spec_z, solver=None, folds=None, levels=None, **kwargs):
    """Cross-fitted one-step shortfall ``S_a(t) = E(t - Y(a))_+`` on ``levels``.

    Returns ``(levels, shortfall[2, L], (eta_0, eta_1))``.
    """
    levels = check_grid(levels if levels is not None else default_grid(data.y), "levels")
    est = crossfit_cdf(data, spec_w, spec_z, solver=solver, folds=folds,
                       grid=levels[:1], levels=levels, **kwargs)
    return est.levels, est.shortfall, est.shortfall_influence


def por_pipw_estimates(estimate):
    """The one-bridge curves ``P_n h`` (POR) and ``P_n{1(A=a) q B_y}`` (PIPW)."""
    return {"POR": estimate.por, "PIPW": estimate.pipw}


def naive_aipw_cdf(data, grid=None, folds=None, clip=(0.03, 0.97), seed=None, n_folds=5):
    """Cross-fitted AIPW treating ``(X, Z, W)`` as sufficient for confounding.

    Propensity: logistic regression on the pooled features, clipped to
    ``clip``. Outcome: linear-probability regression of ``1(Y <= y)`` on the
    same features within each arm.
    """
    folds = folds or make_folds(data.n, n_folds, seed)
    grid = check_grid(grid if grid is not None else default_grid(data.y), "grid")
    feats = np.hstack([data.x, data.z, data.w])
    B = (data.y[:, None] <= grid[None, :]).astype(float)
    score = np.zeros((2, data.n, grid.size))
    n_clipped = 0
    for k in range(folds.n_folds):
        test = folds.fold_ids == k
        train = ~test
        mu = feats[train].mean(0)
        sd = feats[train].std(0)
        sd[sd == 0] = 1.0
        f = (feats - mu) / sd
        if np.unique(data.a[train]).size < 2:
            raise InputError(f"empty arm in the training complement of fold {k}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prop = LogisticRegression(C=1e6, max_iter=2000).fit(f[train], data.a[train])
        e1 = prop.predict_proba(f[test])[:, 1]
        raw = e1.copy()
        e1 = np.clip(e1, *clip)
        n_clipped += int(np.sum(raw != e1))
        design = np.hstack([np.ones((data.n, 1)), f])
        for arm in ARMS:
            rows = train & (data.a == arm)
            coef, *_ = np.linalg.lstsq(design[rows], B[rows], rcond=None)
            m = design[test] @ coef
            e = e1 if arm == 1 else 1.0 - e1
            treated = (data.a[test] == arm).astype(float)
            score[arm, test] = m + (treated / e)[:, None] * (B[test] - m)
    if n_clipped:
        logger.info("naive AIPW: %d propensities clipped to %s", n_clipped, clip)
    cdf = score.mean(axis=1)
    return CdfProcessEstimate(grid=grid, cdf=cdf, influence=tuple(score[a] - cdf[a] for a in ARMS),
                              method="Naive-AIPW", diagnostics=[{"n_clipped": n_clipped}])


def quantile_from_cdf(grid, cdf, taus):
    """Left-continuous grid quantile ``inf{y: F(y) >= tau}`` (``grid[-1]`` if none)."""
    grid = np.asarray(grid)
    cdf = np.asarray(cdf)
    taus = np.atleast_1d(np.asarray(taus, float))
    hit = cdf[None, :] >= taus[:, None]
    idx = np.where(hit.any(axis=1), hit.argmax(axis=1), grid.size - 1)
    return grid[idx]


@dataclass
class CvarEstimate:
    """Per-arm CVaR values, maximizers and Wald intervals; row ``a``, column ``tau``."""

    taus: np.ndarray
    value: np.ndarray
    quantile: np.ndarray
    shortfall_at_max: np.ndarray
    influence: tuple
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    contrast: np.ndarray
    contrast_se: np.ndarray
    contrast_lower: np.ndarray
    contrast_upper: np.ndarray
    boundary: np.ndarray


def cvar_estimate(levels, shortfall, shortfall_influence, taus, alpha=0.05, search=None):
    """Lower-tail CVaR ``max_t {t - S(t)/tau}`` over the search grid.

    The influence column is ``-eta(t*)/tau`` at the maximizer ``t*``; the
    interval is Wald. ``search`` is an optional boolean mask on ``levels``.
    """
    levels = np.asarray(levels, float)
    taus = np.atleast_1d(np.asarray(taus, float))
    if np.any((taus <= 0) | (taus > 1)):
        raise InputError("tau must lie in (0, 1]")
    mask = np.ones(levels.size, bool) if search is None else np.asarray(search, bool)
    cand = np.flatnonzero(mask)
    n = shortfall_influence[0].shape[0]
    z = norm.ppf(1 - alpha / 2)
    shape = (2, taus.size)
    value, quant, smax, se = (np.zeros(shape) for _ in range(4))
    boundary = np.zeros(shape, bool)
    infl = [np.zeros((n, taus.size)), np.zeros((n, taus.size))]
    for arm in ARMS:
        for j, tau in enumerate(taus):
            crit = levels[cand] - shortfall[arm, cand] / tau
            i = cand[int(np.argmax(crit))]
            value[arm, j] = levels[i] - shortfall[arm, i] / tau
            quant[arm, j] = levels[i]
            smax[arm, j] = shortfall[arm, i]
            infl[arm][:, j] = -shortfall_influence[arm][:, i] / tau
            se[arm, j] = infl[arm][:, j].std() / np.sqrt(n)
            boundary[arm, j] = i in (cand[0], cand[-1])
    if boundary.any():
        warnings.warn("CVaR maximizer at the edge of the search grid; enlarge search grid",
                      RuntimeWarning, stacklevel=2)
    contrast = value[1] - value[0]
    csd = (infl[1] - infl[0]).std(axis=0) / np.sqrt(n)
    return CvarEstimate(taus=taus, value=value, quantile=quant, shortfall_at_max=smax,
                        influence=tuple(infl), se=se, lower=value - z * se, upper=value + z * se,
                        contrast=contrast, contrast_se=csd, contrast_lower=contrast - z * csd,
                        contrast_upper=contrast + z * csd, boundary=boundary)


class ProximalDistributionEstimator(BaseEstimator):
    """Cross-fitted proximal one-step estimator of counterfactual CDFs.

    ``fit`` takes a :class:`~proxidist.data.Dataset` and stores the CDF
    process (``estimate_``); band, quantile and CVaR summaries are computed
    from it on request.

    Parameters
    ----------
    basis_w, basis_z : BasisSpec
        Feature maps for the outcome and treatment bridges.
    solver : {"ridge", "square", "pinv"}
    ridge_constant : float
        ``lambda = ridge_constant / sqrt(n)``.
    n_folds : int
    grid : array-like or None
        CDF thresholds; by default ``n_grid`` empirical quantiles of ``Y``
        between ``grid_range``.
    shortfall : bool
        Also estimate the shortfall process on the grid (needed for CVaR).
    """

    def __init__(self, basis_w=None, basis_z=None, solver="ridge", ridge_constant=0.01,
                 n_folds=5, grid=None, n_grid=61, grid_range=(0.02, 0.98), shortfall=True,
                 random_state=None):
        self.basis_w = basis_w
        self.basis_z = basis_z
        self.solver = solver
        self.ridge_constant = ridge_constant
        self.n_folds = n_folds
        self.grid = grid
        self.n_grid = n_grid
        self.grid_range = grid_range
        self.shortfall = shortfall
        self.random_state = random_state

    def _specs(self):
        bw = self.basis_w or BasisSpec(kind="polynomial", side="w", degree=1)
        bz = self.basis_z or BasisSpec(kind="polynomial", side="z", degree=1)
        return bw, bz

    def fit(self, data, y=None):
        data.check_arms()
        if not data.is_finite():
            raise InputError("dataset has missing values; apply preprocessing first")
        grid = (np.asarray(self.grid, float) if self.grid is not None
                else default_grid(data.y, self.n_grid, *self.grid_range))
        bw, bz = self._specs()
        self.folds_ = make_folds(data.n, self.n_folds, self.random_state)
        solver = SolverConfig(method=self.solver, ridge_constant=self.ridge_constant)
        self.estimate_ = crossfit_cdf(data, bw, bz, solver=solver, folds=self.folds_, grid=grid,
                                      levels=grid if self.shortfall else None)
        self.grid_ = self.estimate_.grid
        self.cdf_ = self.estimate_.cdf
        self.n_ = data.n
        return self

    def projected_cdf(self):
        from .bands import isotonic_project
        check_is_fitted(self, "estimate_")
        return np.vstack([isotonic_project(self.cdf_[a]) for a in ARMS])

    def quantiles(self, taus):
        proj = self.projected_cdf()
        return np.vstack([quantile_from_cdf(self.grid_, proj[a], taus) for a in ARMS])

    def qte(self, taus):
        q = self.quantiles(taus)
        return q[1] - q[0]

    def bands(self, alpha=0.05, n_multipliers=1000, law="rademacher", seed=None):
        from .bands import cdf_band, multiplier_critical_value
        check_is_fitted(self, "estimate_")
        c = multiplier_critical_value(self.estimate_.influence, n_multipliers, alpha, seed, law=law)
        return cdf_band(self.estimate_, c, alpha, n_multipliers=n_multipliers, law=law)

    def quantile_bands(self, taus, alpha=0.05, n_multipliers=1000, seed=None):
        from .bands import invert_band, monotone_envelope
        return invert_band(monotone_envelope(self.bands(alpha, n_multipliers, seed=seed)), taus)

    def cvar(self, taus, alpha=0.05):
        check_is_fitted(self, "estimate_")
        if self.estimate_.shortfall is None:
            raise InputError("fit with shortfall=True to estimate CVaR")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return cvar_estimate(self.estimate_.levels, self.estimate_.shortfall,
                                 self.estimate_.shortfall_influence, taus, alpha)


class NaiveAIPWEstimator(BaseEstimator):
    """Observed-confounding AIPW baseline with the same fitted-curve interface."""

    def __init__(self, n_folds=5, grid=None, n_grid=61, grid_range=(0.02, 0.98),
                 clip=(0.03, 0.97), random_state=None):
        self.n_folds = n_folds
        self.grid = grid
        self.n_grid = n_grid
        self.grid_range = grid_range
        self.clip = clip
        self.random_state = random_state

    def fit(self, data, y=None):
        data.check_arms()
        grid = (np.asarray(self.grid, float) if self.grid is not None
                else default_grid(data.y, self.n_grid, *self.grid_range))
        folds = make_folds(data.n, self.n_folds, self.random_state)
        self.estimate_ = naive_aipw_cdf(data, grid, folds, clip=tuple(self.clip))
        self.grid_ = self.estimate_.grid
        self.cdf_ = self.estimate_.cdf
        return self

    def quantiles(self, taus):
        from .bands import isotonic_project
        check_is_fitted(self, "estimate_")
        return np.vstack([quantile_from_cdf(self.grid_, isotonic_project(self.cdf_[a]), taus)
                          for a in ARMS])

    def qte(self, taus):
        q = self.quantiles(taus)
        return q[1] - q[0]
