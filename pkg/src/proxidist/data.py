"""Datasets, tabular ingestion, preprocessing and covariate screening."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InputError, as_1d, as_2d, check_treatment

logger = logging.getLogger(__name__)

ROLES = ("y", "a", "z", "w", "x")


@dataclass(frozen=True)
class Dataset:
    """Rows of ``(Y, A, Z, W, X)``.

    ``x`` columns listed in ``categorical`` hold integer category codes
    (indices into ``categories[name]``); ``NaN`` marks a missing cell until
    preprocessing has been applied.
    """

    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    w: np.ndarray
    x: np.ndarray
    z_names: tuple = ()
    w_names: tuple = ()
    x_names: tuple = ()
    categorical: tuple = ()
    categories: dict = field(default_factory=dict)
    n_dropped: int = 0

    def __post_init__(self):
        y = as_1d(self.y, "y")
        a = check_treatment(self.a)
        n = y.size
        z = as_2d(self.z, "z", allow_nan=True) if np.size(self.z) else np.empty((n, 0))
        w = as_2d(self.w, "w", allow_nan=True) if np.size(self.w) else np.empty((n, 0))
        x = as_2d(self.x, "x", allow_nan=True) if np.size(self.x) else np.empty((n, 0))
        for name, block in (("a", a), ("z", z), ("w", w), ("x", x)):
            if len(block) != n:
                raise InputError(f"block {name} has {len(block)} rows, expected {n}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)
        for attr, block, prefix in (("z_names", z, "z"), ("w_names", w, "w"), ("x_names", x, "x")):
            names = tuple(getattr(self, attr)) or tuple(f"{prefix}{j + 1}" for j in range(block.shape[1]))
            if len(names) != block.shape[1]:
                raise InputError(f"{attr} has {len(names)} entries for {block.shape[1]} columns")
            object.__setattr__(self, attr, names)
        object.__setattr__(self, "categorical", tuple(self.categorical))

    @property
    def n(self):
        return self.y.size

    @property
    def categorical_mask(self):
        return np.array([name in self.categorical for name in self.x_names], dtype=bool)

    def subset(self, rows):
        rows = np.asarray(rows)
        return replace(self, y=self.y[rows], a=self.a[rows], z=self.z[rows],
                       w=self.w[rows], x=self.x[rows])

    def check_arms(self):
        counts = np.bincount(self.a, minlength=2)
        if np.any(counts == 0):
            raise InputError(f"empty arm: treatment counts are {counts.tolist()}")
        return counts

    def is_finite(self):
        return all(np.all(np.isfinite(b)) for b in (self.y, self.z, self.w, self.x))


def _resolve_schema(columns, schema):
    missing = []
    resolved = {}
    for role in ROLES:
        spec = schema.get(role, [] if role in ("z", "w", "x") else None)
        if spec is None:
            raise InputError(f"schema has no column for role {role!r}")
        if role in ("y", "a"):
            names = [spec] if isinstance(spec, str) else list(spec)
            if len(names) != 1:
                raise InputError(f"role {role!r} must map to a single column")
        elif spec == "*":
            used = set()
            for r in ("y", "a", "z", "w"):
                s = schema.get(r, [])
                used.update([s] if isinstance(s, str) else s)
            used.update(schema.get("exclude", []))
            names = [c for c in columns if c not in used]
        else:
            names = [spec] if isinstance(spec, str) else list(spec)
        missing.extend(c for c in names if c not in columns)
        resolved[role] = names
    if missing:
        raise InputError(f"missing column(s): {', '.join(missing)}")
    return resolved


def _encode_categoricals(frame):
    codes = {}
    categories = {}
    categorical = []
    for col in frame.columns:
        series = frame[col]
        if pd.api.types.is_numeric_dtype(series) or pd.api.types.is_bool_dtype(series):
            codes[col] = series.astype(float).to_numpy()
            continue
        labels = sorted(series.dropna().astype(str).unique())
        lookup = {lab: float(i) for i, lab in enumerate(labels)}
        codes[col] = series.map(lambda v: lookup.get(str(v), np.nan) if pd.notna(v) else np.nan).to_numpy(float)
        categories[col] = tuple(labels)
        categorical.append(col)
    mat = np.column_stack([codes[c] for c in frame.columns]) if len(frame.columns) else np.empty((len(frame), 0))
    return mat, tuple(categorical), categories


def dataset_from_frame(frame, schema):
    """Build a :class:`Dataset` from a DataFrame and a role -> column map.

    Rows with a missing outcome or treatment are dropped and counted in
    ``n_dropped``. ``schema["x"] = "*"`` takes every column not assigned to
    another role (minus ``schema["exclude"]``).
    """
    if len(frame) == 0:
        raise InputError("empty file")
    roles = _resolve_schema(list(frame.columns), schema)
    ycol, acol = roles["y"][0], roles["a"][0]
    keep = frame[ycol].notna() & frame[acol].notna()
    n_dropped = int((~keep).sum())
    frame = frame.loc[keep].reset_index(drop=True)
    if len(frame) == 0:
        raise InputError("no rows with observed outcome and treatment")
    a = pd.to_numeric(frame[acol], errors="coerce").to_numpy(float)
    if np.any(np.isnan(a)) or np.any(~np.isin(a, (0.0, 1.0))):
        bad = frame[acol][~np.isin(a, (0.0, 1.0))].iloc[0]
        raise InputError(f"non-binary treatment: column {acol!r} contains {bad!r}")
    y = pd.to_numeric(frame[ycol], errors="coerce").to_numpy(float)
    if np.any(np.isnan(y)):
        raise InputError(f"outcome column {ycol!r} is not numeric")
    proxies = {}
    for role in ("z", "w"):
        block = frame[roles[role]].apply(pd.to_numeric, errors="coerce")
        if any(not pd.api.types.is_numeric_dtype(frame[c]) for c in roles[role]):
            raise InputError(f"categorical proxies are not supported ({role})")
        proxies[role] = block.to_numpy(float) if roles[role] else np.empty((len(frame), 0))
    x, categorical, categories = _encode_categoricals(frame[roles["x"]])
    if n_dropped:
        logger.info("dropped %d rows with missing outcome or treatment", n_dropped)
    return Dataset(y=y, a=a, z=proxies["z"], w=proxies["w"], x=x,
                   z_names=tuple(roles["z"]), w_names=tuple(roles["w"]),
                   x_names=tuple(roles["x"]), categorical=categorical,
                   categories=categories, n_dropped=n_dropped)


def load_dataset(path, schema):
    """Read a comma-separated table (header row, empty cell = missing)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise InputError("empty file") from exc
    return dataset_from_frame(frame, schema)


RHC_Z = ("pafi1", "paco21")
RHC_W = ("ph1", "hema1")
RHC_EXCLUDE = ("", "Unnamed: 0", "ptid", "sadmdte", "dschdte", "dthdte", "lstctdte",
               "death", "dth30", "t3d30", "swang1", "hospital_days", "y")


def rhc_frame(frame, winsor_quantile=0.995):
    """Apply the RHC outcome recipe to a raw SUPPORT/RHC table.

    Hospital days are ``dschdte - sadmdte`` with ``dthdte - sadmdte`` as the
    fallback when the discharge date is missing; only positive stays are kept,
    stays are Winsorized at the empirical ``winsor_quantile`` and the outcome
    is ``log(1 + days)``. The treatment ``swang1`` accepts ``"RHC"`` /
    ``"No RHC"`` labels or 0/1 codes.
    """
    frame = frame.copy()
    for col in ("sadmdte", "dschdte", "swang1"):
        if col not in frame.columns:
            raise InputError(f"missing column: {col}")
    days = frame["dschdte"] - frame["sadmdte"]
    if "dthdte" in frame.columns:
        days = days.where(frame["dschdte"].notna(), frame["dthdte"] - frame["sadmdte"])
    frame["hospital_days"] = days
    frame = frame.loc[frame["hospital_days"] > 0].reset_index(drop=True)
    cap = np.quantile(frame["hospital_days"].to_numpy(float), winsor_quantile)
    frame["hospital_days"] = frame["hospital_days"].clip(upper=cap)
    frame["y"] = np.log1p(frame["hospital_days"].to_numpy(float))
    treat = frame["swang1"]
    if not pd.api.types.is_numeric_dtype(treat):
        mapping = {"RHC": 1.0, "No RHC": 0.0}
        treat = treat.map(lambda v: mapping.get(str(v).strip(), np.nan))
    frame["swang1"] = treat
    return frame


def load_rhc(path, winsor_quantile=0.995):
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    raw = pd.read_csv(path)
    frame = rhc_frame(raw, winsor_quantile)
    schema = {"y": "y", "a": "swang1", "z": list(RHC_Z), "w": list(RHC_W), "x": "*",
              "exclude": [c for c in RHC_EXCLUDE if c in frame.columns]}
    return dataset_from_frame(frame, schema)


class Preprocessor(TransformerMixin, BaseEstimator):
    """Median/mode imputation, standardization and one-hot encoding.

    Numeric columns are median-imputed and standardized with the
    statistics of the rows passed to :meth:`fit`; categorical columns (given
    by index, holding integer codes) are mode-imputed and one-hot encoded
    with one indicator per category seen at fit time.
    """

    def __init__(self, categorical_features=(), standardize=True):
        self.categorical_features = categorical_features
        self.standardize = standardize

    def fit(self, X, y=None):
        X = as_2d(X, "X", allow_nan=True)
        if X.shape[0] == 0:
            raise InputError("cannot fit preprocessing on zero rows")
        cat = np.zeros(X.shape[1], dtype=bool)
        cat[list(self.categorical_features)] = True
        fill = np.empty(X.shape[1])
        center = np.zeros(X.shape[1])
        scale = np.ones(X.shape[1])
        levels = {}
        for j in range(X.shape[1]):
            col = X[:, j]
            seen = col[~np.isnan(col)]
            if seen.size == 0:
                raise InputError(f"column {j} is entirely missing")
            if cat[j]:
                values, counts = np.unique(seen, return_counts=True)
                fill[j] = values[np.argmax(counts)]
                levels[j] = values
                continue
            fill[j] = np.median(seen)
            if self.standardize:
                full = np.where(np.isnan(col), fill[j], col)
                center[j] = full.mean()
                sd = full.std()
                scale[j] = sd if sd > 0 else 1.0
        self.is_categorical_ = cat
        self.fill_values_ = fill
        self.mean_ = center
        self.scale_ = scale
        self.categories_ = levels
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "fill_values_")
        X = as_2d(X, "X", allow_nan=True)
        if X.shape[1] != self.n_features_in_:
            raise InputError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        out = []
        for j in range(X.shape[1]):
            col = np.where(np.isnan(X[:, j]), self.fill_values_[j], X[:, j])
            if self.is_categorical_[j]:
                out.extend((col == level).astype(float) for level in self.categories_[j])
            else:
                out.append((col - self.mean_[j]) / self.scale_[j])
        return np.column_stack(out) if out else np.empty((X.shape[0], 0))

    def output_names(self, names, categories=None):
        check_is_fitted(self, "fill_values_")
        categories = categories or {}
        out = []
        for j, name in enumerate(names):
            if self.is_categorical_[j]:
                labels = categories.get(name)
                for level in self.categories_[j]:
                    label = labels[int(level)] if labels is not None else f"{level:g}"
                    out.append(f"{name}={label}")
            else:
                out.append(name)
        return tuple(out)


@dataclass(frozen=True)
class PreprocessPlan:
    """Fitted preprocessing for the proxy and covariate blocks.

    ``fitted_on`` is ``"full"`` or a fold label.
    """

    z: Preprocessor
    w: Preprocessor
    x: Preprocessor
    fitted_on: str = "full"

    def apply(self, data):
        x = self.x.transform(data.x)
        return replace(
            data,
            z=self.z.transform(data.z) if data.z.shape[1] else data.z,
            w=self.w.transform(data.w) if data.w.shape[1] else data.w,
            x=x,
            x_names=self.x.output_names(data.x_names, data.categories),
            categorical=(),
            categories={},
        )


def fit_preprocess(data, rows=None, fitted_on=None, standardize=True):
    """Fit imputation/standardization/one-hot statistics on ``rows`` only."""
    rows = np.arange(data.n) if rows is None else np.asarray(rows)
    if rows.size == 0:
        raise InputError("preprocessing scope has no rows")
    sub = data.subset(rows)

    def fit_block(block, categorical=()):
        pre = Preprocessor(categorical_features=categorical, standardize=standardize)
        if block.shape[1] == 0:
            pre.fit(np.zeros((block.shape[0], 1)))
            pre.n_features_in_ = 0
            return pre
        return pre.fit(block)

    label = fitted_on or ("full" if rows.size == data.n else "rows")
    return PreprocessPlan(z=fit_block(sub.z), w=fit_block(sub.w),
                          x=fit_block(sub.x, np.flatnonzero(data.categorical_mask)),
                          fitted_on=label)


def screen_covariates(data, k):
    """Indices of the ``k`` X-features with the largest |corr(., A)| + |corr(., Y)|.

    Zero-variance features are excluded with a warning. Ties go to the lower
    column index.
    """
    x = data.x
    if not np.all(np.isfinite(x)):
        raise InputError("screening requires preprocessed (finite) covariates")
    if k > x.shape[1]:
        raise InputError(f"requested {k} features but only {x.shape[1]} are available")
    sd = x.std(axis=0)
    usable = sd > 0
    if not np.all(usable):
        warnings.warn(f"excluding {int((~usable).sum())} zero-variance feature(s) from screening",
                      RuntimeWarning, stacklevel=2)
    score = np.full(x.shape[1], -np.inf)
    xc = (x[:, usable] - x[:, usable].mean(0)) / sd[usable]

    def corr(v):
        v = np.asarray(v, float)
        s = v.std()
        if s == 0:
            return np.zeros(xc.shape[1])
        return xc.T @ ((v - v.mean()) / s) / len(v)

    score[usable] = np.abs(corr(data.a)) + np.abs(corr(data.y))
    # stable sort on -score keeps ascending index among ties
    order = np.argsort(-score, kind="stable")
    chosen = [int(j) for j in order[:k] if np.isfinite(score[j])]
    if len(chosen) < k:
        raise InputError(f"only {len(chosen)} usable features for k={k}")
    return chosen
