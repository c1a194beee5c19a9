"""Finite-rank feature maps for the outcome-side and treatment-side bridges.

Every map is an sklearn transformer over a *block* matrix; :class:`BasisSpec`
says which dataset columns form the block and which map to apply.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from math import comb

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ConfigError, InputError, as_2d

KINDS = ("polynomial", "spline", "realdata-interaction")


class PolynomialBasis(TransformerMixin, BaseEstimator):
    """All monomials of total degree ``<= degree`` in the block's columns.

    Columns are ordered by degree, then lexicographically by variable index
    (``combinations_with_replacement`` order).
    """

    def __init__(self, degree=1, intercept=True):
        self.degree = degree
        self.intercept = intercept

    def fit(self, X, y=None):
        X = as_2d(X, "block")
        if self.degree < 1:
            raise ConfigError("polynomial degree must be >= 1")
        p = X.shape[1]
        powers = [c for d in range(1, self.degree + 1)
                  for c in itertools.combinations_with_replacement(range(p), d)]
        self.terms_ = ([()] if self.intercept else []) + powers
        self.n_features_in_ = p
        return self

    def transform(self, X):
        check_is_fitted(self, "terms_")
        X = as_2d(X, "block")
        out = np.empty((X.shape[0], len(self.terms_)))
        for j, term in enumerate(self.terms_):
            col = np.ones(X.shape[0])
            for v in term:
                col = col * X[:, v]
            out[:, j] = col
        return out

    @staticmethod
    def dimension(n_vars, degree, intercept=True):
        return comb(n_vars + degree, degree) - (0 if intercept else 1)


def _natural_spline_columns(x, knots):
    # truncated-power natural cubic spline: x, then K-2 constrained cubic terms
    k = len(knots)

    def d(j):
        return (np.maximum(x - knots[j], 0.0) ** 3 - np.maximum(x - knots[-1], 0.0) ** 3) / (knots[-1] - knots[j])

    last = d(k - 2)
    return [x] + [d(j) - last for j in range(k - 2)]


class NaturalSplineBasis(TransformerMixin, BaseEstimator):
    """Additive natural cubic splines with knots at empirical quantiles.

    ``n_knots`` counts boundary knots. Variables with fewer distinct values
    than knots enter linearly.
    """

    def __init__(self, n_knots=4, knots=None, intercept=True):
        self.n_knots = n_knots
        self.knots = knots
        self.intercept = intercept

    def fit(self, X, y=None):
        X = as_2d(X, "block")
        if self.knots is not None:
            knots = [np.asarray(k, float) for k in self.knots]
            if len(knots) != X.shape[1]:
                raise ConfigError("need one knot vector per block column")
        else:
            if self.n_knots < 3:
                raise ConfigError("natural splines need at least 3 knots")
            probs = np.linspace(0.0, 1.0, self.n_knots)
            knots = []
            for j in range(X.shape[1]):
                kv = np.unique(np.quantile(X[:, j], probs))
                knots.append(kv if kv.size == self.n_knots else None)
        self.knots_ = knots
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "knots_")
        X = as_2d(X, "block")
        cols = [np.ones(X.shape[0])] if self.intercept else []
        for j, kv in enumerate(self.knots_):
            if kv is None:
                cols.append(X[:, j])
            else:
                cols.extend(_natural_spline_columns(X[:, j], kv))
        return np.column_stack(cols)


class InteractionBasis(TransformerMixin, BaseEstimator):
    """Intercept, covariates, proxy mains, squares, cross-products and covariate-proxy interactions.

    The first ``n_proxies`` block columns are the proxies, the rest are the
    (screened) covariates.
    """

    def __init__(self, n_proxies=2, intercept=True):
        self.n_proxies = n_proxies
        self.intercept = intercept

    def fit(self, X, y=None):
        X = as_2d(X, "block")
        if not 0 < self.n_proxies <= X.shape[1]:
            raise ConfigError("n_proxies must be between 1 and the block width")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = as_2d(X, "block")
        p = X[:, :self.n_proxies]
        c = X[:, self.n_proxies:]
        cols = [np.ones((X.shape[0], 1))] if self.intercept else []
        cols += [c, p, p ** 2]
        cross = [p[:, i] * p[:, j] for i, j in itertools.combinations(range(p.shape[1]), 2)]
        if cross:
            cols.append(np.column_stack(cross))
        inter = [c[:, i] * p[:, j] for i in range(c.shape[1]) for j in range(p.shape[1])]
        if inter:
            cols.append(np.column_stack(inter))
        return np.hstack(cols)

    @staticmethod
    def dimension(n_covariates, n_proxies, intercept=True):
        return (int(intercept) + n_covariates + 2 * n_proxies + comb(n_proxies, 2)
                + n_covariates * n_proxies)


@dataclass(frozen=True)
class BasisSpec:
    """Which block columns feed which feature map.

    ``side`` is ``"w"`` (outcome bridge, block ``(W, X)``) or ``"z"``
    (treatment bridge, block ``(Z, X)``). ``x_columns`` restricts the
    covariates (``None`` = all). ``max_dim`` caps the feature count; the
    default cap is the number of rows.
    """

    kind: str = "polynomial"
    side: str = "w"
    degree: int = 1
    n_knots: int = 4
    knots: tuple | None = None
    intercept: bool = True
    x_columns: tuple | None = None
    max_dim: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown basis kind {self.kind!r}")
        if self.side not in ("w", "z"):
            raise ConfigError("side must be 'w' or 'z'")
        if self.kind == "polynomial" and self.degree < 1:
            raise ConfigError("polynomial degree must be >= 1")

    def with_(self, **changes):
        return replace(self, **changes)

    def block(self, data):
        proxies = data.w if self.side == "w" else data.z
        x = data.x if self.x_columns is None else data.x[:, list(self.x_columns)]
        return np.hstack([proxies, x])

    def n_proxies(self, data):
        return (data.w if self.side == "w" else data.z).shape[1]

    def make(self, data):
        if self.kind == "polynomial":
            return PolynomialBasis(degree=self.degree, intercept=self.intercept)
        if self.kind == "spline":
            return NaturalSplineBasis(n_knots=self.n_knots, knots=self.knots, intercept=self.intercept)
        return InteractionBasis(n_proxies=self.n_proxies(data), intercept=self.intercept)

    def dimension(self, data):
        width = self.block(data).shape[1]
        if self.kind == "polynomial":
            return PolynomialBasis.dimension(width, self.degree, self.intercept)
        if self.kind == "realdata-interaction":
            p = self.n_proxies(data)
            return InteractionBasis.dimension(width - p, p, self.intercept)
        return None

    def to_dict(self):
        return {"kind": self.kind, "side": self.side, "degree": self.degree,
                "n_knots": self.n_knots, "knots": self.knots, "intercept": self.intercept,
                "x_columns": None if self.x_columns is None else list(self.x_columns),
                "max_dim": self.max_dim}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("x_columns") is not None:
            d["x_columns"] = tuple(d["x_columns"])
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def fit_basis(spec, data, rows=None):
    """Fit the feature map of ``spec`` on ``rows`` (all rows by default)."""
    block = spec.block(data)
    fit_block = block if rows is None else block[rows]
    return spec.make(data).fit(fit_block)


def build_basis(spec, data, rows=None):
    """Evaluate ``spec`` on every row of ``data`` (map fitted on ``rows``)."""
    block = spec.block(data)
    mapping = fit_basis(spec, data, rows)
    out = mapping.transform(block)
    cap = spec.max_dim if spec.max_dim is not None else data.n
    if out.shape[1] > cap:
        raise InputError(f"basis dimension {out.shape[1]} exceeds the cap {cap}")
    return out


class FoldStandardizer(TransformerMixin, BaseEstimator):
    """Standardize basis columns with training-row statistics.

    Constant columns equal to one are treated as the intercept and kept
    as is. With ``drop_degenerate`` the remaining constant columns and exact
    duplicates (e.g. ``w**2 == w`` for binary ``w``) are dropped, so that
    the moment matrix is not singular by construction.
    """

    def __init__(self, drop_degenerate=True, tol=1e-10):
        self.drop_degenerate = drop_degenerate
        self.tol = tol

    def fit(self, B, y=None):
        B = as_2d(B, "basis")
        mean = B.mean(axis=0)
        sd = B.std(axis=0)
        const = sd <= self.tol * np.maximum(1.0, np.abs(mean))
        intercept = const & np.isclose(mean, 1.0)
        keep = np.ones(B.shape[1], dtype=bool)
        if self.drop_degenerate:
            first_intercept = np.flatnonzero(intercept)[:1]
            keep[const] = False
            keep[first_intercept] = True
        center = np.where(const, 0.0, mean)
        scale = np.where(const, 1.0, sd)
        if self.drop_degenerate:
            Zs = (B - center) / scale
            kept = []
            for j in np.flatnonzero(keep):
                if any(np.max(np.abs(Zs[:, j] - Zs[:, i])) <= 1e-9 for i in kept):
                    keep[j] = False
                else:
                    kept.append(j)
        self.mean_ = center
        self.scale_ = scale
        self.keep_ = keep
        self.n_features_in_ = B.shape[1]
        return self

    def transform(self, B):
        check_is_fitted(self, "keep_")
        B = as_2d(B, "basis")
        return ((B - self.mean_) / self.scale_)[:, self.keep_]
