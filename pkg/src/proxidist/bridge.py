"""Finite-rank moment systems and primal/dual bridge solvers.

For arm ``a`` with outcome-side features ``b_W`` and treatment-side
features ``b_Z`` the moment system is::

    Sigma    = P{1(A=a) b_Z b_W'}           (d_Z x d_W)
    gamma(y) = P{1(A=a) b_Z 1(Y <= y)}      (d_Z per threshold)
    rho(t)   = P{1(A=a) b_Z (t - Y)_+}      (d_Z per shortfall level)
    mu_W     = P{b_W}

The outcome bridge ``h_y = b_W' theta(y)`` solves ``Sigma theta(y) =
gamma(y)`` and the treatment bridge ``q = b_Z' alpha`` solves ``Sigma'
alpha = mu_W``. ``P`` is the empirical measure unless probability weights
are supplied, which lets a finite-support law be passed in as a weighted
sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._validation import (ConfigError, IllConditionedError, InputError, as_1d, as_2d,
                          check_consistent_length, check_grid, check_spd, check_weights)

SOLVERS = ("square", "pinv", "ridge")


@dataclass(frozen=True)
class MomentSystem:
    arm: int
    sigma: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    mu_w: np.ndarray
    thresholds: np.ndarray
    levels: np.ndarray
    n: int
    arm_fraction: float

    @property
    def shape(self):
        return self.sigma.shape


def _positive_part_matrix(y, levels):
    return np.maximum(levels[None, :] - y[:, None], 0.0)


def _indicator_matrix(y, thresholds):
    return (y[:, None] <= thresholds[None, :]).astype(float)


def assemble_moments(arm, bW, bZ, y, a, thresholds=(), levels=(), weights=None):
    """Empirical (or weighted) moment system for one treatment arm.

    All averages run over every row; the arm indicator zeroes the others.
    """
    bW = as_2d(bW, "bW")
    bZ = as_2d(bZ, "bZ")
    y = as_1d(y, "y")
    a = as_1d(a, "a")
    check_consistent_length(bW, bZ, y, a)
    n = y.size
    w = check_weights(weights, n)
    thresholds = check_grid(thresholds, "thresholds") if np.size(thresholds) else np.empty(0)
    levels = check_grid(levels, "levels") if np.size(levels) else np.empty(0)
    ind = (a == arm).astype(float) * w
    if not np.any(ind > 0):
        raise InputError(f"empty arm: no rows with A={arm}")
    wz = bZ * ind[:, None]
    sigma = wz.T @ bW
    gamma = wz.T @ _indicator_matrix(y, thresholds) if thresholds.size else np.empty((bZ.shape[1], 0))
    rho = wz.T @ _positive_part_matrix(y, levels) if levels.size else np.empty((bZ.shape[1], 0))
    mu_w = w @ bW
    return MomentSystem(arm=int(arm), sigma=sigma, gamma=gamma, rho=rho, mu_w=mu_w,
                        thresholds=thresholds, levels=levels, n=n, arm_fraction=float(ind.sum()))


@dataclass(frozen=True)
class BridgeFit:
    """Bridge coefficients. Columns of ``theta`` follow the threshold grid,
    columns of ``shortfall_theta`` follow the shortfall levels."""

    theta: np.ndarray
    alpha: np.ndarray
    shortfall_theta: np.ndarray
    solver: str
    params: dict = field(default_factory=dict)
    effective_rank: int | None = None

    def h(self, bW):
        return np.asarray(bW) @ self.theta

    def q(self, bZ):
        return np.asarray(bZ) @ self.alpha

    def r(self, bW):
        return np.asarray(bW) @ self.shortfall_theta


def _rhs(ms):
    return np.hstack([ms.gamma, ms.rho])


def _split(ms, coef):
    k = ms.gamma.shape[1]
    return coef[:, :k], coef[:, k:]


def solve_square(ms, cond_cap=1e12):
    """Closed-form solve of a square nonsingular system (one LU for all grids)."""
    sigma = ms.sigma
    if sigma.shape[0] != sigma.shape[1]:
        raise InputError(f"square solver needs d_W == d_Z, got {sigma.shape}")
    sv = np.linalg.svd(sigma, compute_uv=False)
    kappa = sv[-1]
    cond = np.inf if kappa == 0 else sv[0] / kappa
    if not np.isfinite(cond) or cond > cond_cap:
        raise IllConditionedError(
            f"moment matrix is singular or ill-conditioned (kappa_min={kappa:.3g}, "
            f"condition number={cond:.3g}); use the ridge or pinv solver",
            kappa_min=kappa, condition_number=cond)
    lu = scipy.linalg.lu_factor(sigma)
    coef = scipy.linalg.lu_solve(lu, _rhs(ms))
    alpha = scipy.linalg.lu_solve(lu, ms.mu_w, trans=1)
    theta, stheta = _split(ms, coef)
    return BridgeFit(theta=theta, alpha=alpha, shortfall_theta=stheta, solver="square",
                     params={"cond_cap": cond_cap}, effective_rank=sigma.shape[0])


def default_rank_tol(sigma):
    return np.finfo(float).eps * max(sigma.shape)


def _pinv_apply(matrix, rhs, rank_tol):
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    cutoff = rank_tol * (s[0] if s.size else 0.0)
    keep = s > cutoff
    if not np.any(keep):
        shape = (matrix.shape[1],) + np.shape(rhs)[1:]
        return np.zeros(shape), 0
    inv = (vt[keep].T / s[keep]) @ u[:, keep].T
    return inv @ rhs, int(keep.sum())


def solve_pinv(ms, rank_tol=None):
    """Moore-Penrose minimum-norm solutions.

    Singular values below ``rank_tol * sigma_max`` count as zero.
    """
    tol = default_rank_tol(ms.sigma) if rank_tol is None else rank_tol
    coef, rank = _pinv_apply(ms.sigma, _rhs(ms), tol)
    alpha, _ = _pinv_apply(ms.sigma.T, ms.mu_w, tol)
    theta, stheta = _split(ms, coef)
    return BridgeFit(theta=theta, alpha=alpha, shortfall_theta=stheta, solver="pinv",
                     params={"rank_tol": tol}, effective_rank=rank)


def _filtered_solve(weighted, rhs, lam, tol):
    """``(M'M + lam I)^-1 M' rhs`` through the SVD of ``M``.

    Spectral filtering avoids forming the normal matrix, so tiny ridges stay
    accurate; with ``lam == 0`` small singular values are truncated.
    """
    u, s, vt = np.linalg.svd(weighted, full_matrices=False)
    proj = u.T @ rhs
    if lam > 0:
        filt = s / (s ** 2 + lam)
        rank = weighted.shape[1]
    else:
        keep = s > tol * (s[0] if s.size else 0.0) * max(weighted.shape)
        filt = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
        rank = int(keep.sum())
    scaled = filt[:, None] * proj if proj.ndim == 2 else filt * proj
    return vt.T @ scaled, rank


def solve_ridge(ms, lambda_h, lambda_q, omega_z=None, omega_w=None):
    """Tikhonov-regularized bridges through their normal equations.

    ``theta(y) = (S' Oz S + lambda_h I)^-1 S' Oz gamma(y)`` and
    ``alpha = (S Ow S' + lambda_q I)^-1 S Ow mu_W``. With a zero ridge and a
    singular normal matrix the Moore-Penrose inverse is used instead.
    """
    if lambda_h < 0 or lambda_q < 0:
        raise ConfigError("ridge constants must be nonnegative")
    sigma = ms.sigma
    dz, dw = sigma.shape
    oz = np.eye(dz) if omega_z is None else check_spd(omega_z, "Omega_Z")
    ow = np.eye(dw) if omega_w is None else check_spd(omega_w, "Omega_W")
    if oz.shape != (dz, dz) or ow.shape != (dw, dw):
        raise InputError("weighting matrices do not match the moment dimensions")
    tol = np.finfo(float).eps
    lz = np.linalg.cholesky(oz).T
    lw = np.linalg.cholesky(ow).T
    coef, rank = _filtered_solve(lz @ sigma, lz @ _rhs(ms), lambda_h, tol)
    alpha, _ = _filtered_solve(lw @ sigma.T, lw @ ms.mu_w, lambda_q, tol)
    theta, stheta = _split(ms, coef)
    return BridgeFit(theta=theta, alpha=alpha, shortfall_theta=stheta, solver="ridge",
                     params={"lambda_h": lambda_h, "lambda_q": lambda_q,
                             "omega_z": "identity" if omega_z is None else "custom",
                             "omega_w": "identity" if omega_w is None else "custom"},
                     effective_rank=rank)


@dataclass(frozen=True)
class SolverConfig:
    """How bridge systems are solved.

    ``ridge`` uses ``lambda = ridge_constant * n**-0.5`` for both bridges
    unless ``lambda_h`` / ``lambda_q`` are given explicitly, where ``n`` is the
    full sample size.
    """

    method: str = "ridge"
    ridge_constant: float = 0.01
    lambda_h: float | None = None
    lambda_q: float | None = None
    omega_z: object = None
    omega_w: object = None
    rank_tol: float | None = None
    cond_cap: float = 1e12

    def __post_init__(self):
        if self.method not in SOLVERS:
            raise ConfigError(f"unknown solver {self.method!r}; choose from {SOLVERS}")
        if self.ridge_constant < 0:
            raise ConfigError("ridge_constant must be nonnegative")

    def lambdas(self, n):
        base = self.ridge_constant / np.sqrt(n)
        lh = base if self.lambda_h is None else self.lambda_h
        lq = base if self.lambda_q is None else self.lambda_q
        return lh, lq

    def solve(self, ms, n=None):
        if self.method == "square":
            return solve_square(ms, self.cond_cap)
        if self.method == "pinv":
            return solve_pinv(ms, self.rank_tol)
        lh, lq = self.lambdas(ms.n if n is None else n)
        return solve_ridge(ms, lh, lq, self.omega_z, self.omega_w)

    def to_dict(self):
        return {"method": self.method, "ridge_constant": self.ridge_constant,
                "lambda_h": self.lambda_h, "lambda_q": self.lambda_q,
                "rank_tol": self.rank_tol, "cond_cap": self.cond_cap}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def picard_partial_sums(s, loadings):
    """Cumulative sums ``sum_{j<=m} loadings_j**2 / s_j**2`` for ``m = 1..J``."""
    s = as_1d(s, "singular values")
    loadings = as_1d(loadings, "loadings")
    if s.size != loadings.size or np.any(s <= 0):
        raise InputError("need matching positive singular values and loadings")
    return np.cumsum(loadings ** 2 / s ** 2)


@dataclass(frozen=True)
class SpectralDiagnostics:
    """Weak-proxy diagnostics for one arm's moment system.

    ``kappa_min`` is the smallest singular value of ``Sigma``;
    ``kappa_min_conditional`` rescales by the arm fraction, i.e. the smallest
    singular value of ``E[b_Z b_W' | A=a]``. ``dual_l2_norm`` is
    ``(P{1(A=a) q**2})**0.5`` for the fitted dual bridge.
    """

    singular_values: np.ndarray
    kappa_min: float
    kappa_min_conditional: float
    dual_coef_norm: float
    dual_l2_norm: float | None
    effective_rank: int | None = None
    picard: np.ndarray | None = None

    def to_dict(self):
        out = {
            "singular_values": [float(v) for v in self.singular_values],
            "kappa_min": float(self.kappa_min),
            "kappa_min_conditional": float(self.kappa_min_conditional),
            "dual_coef_norm": float(self.dual_coef_norm),
            "dual_l2_norm": None if self.dual_l2_norm is None else float(self.dual_l2_norm),
            "effective_rank": self.effective_rank,
        }
        if self.picard is not None:
            out["picard_partial_sums"] = [float(v) for v in self.picard]
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def spectral_diagnostics(ms, fit, bZ=None, a=None, weights=None, spectrum=None):
    """Singular values, kappa_min and dual-bridge norms.

    ``bZ`` and ``a`` (rows to evaluate the dual bridge on) give the weighted
    empirical L2 norm; ``spectrum=(s, loadings)`` adds Picard partial sums.
    """
    sv = np.linalg.svd(ms.sigma, compute_uv=False)
    kappa = float(sv[-1]) if sv.size else 0.0
    l2 = None
    if bZ is not None and a is not None:
        bZ = as_2d(bZ, "bZ")
        a = as_1d(a, "a")
        w = check_weights(weights, a.size)
        q = fit.q(bZ)
        l2 = float(np.sqrt(np.sum(w * (a == ms.arm) * q ** 2)))
    picard = None if spectrum is None else picard_partial_sums(*spectrum)
    return SpectralDiagnostics(singular_values=sv, kappa_min=kappa,
                               kappa_min_conditional=kappa / ms.arm_fraction,
                               dual_coef_norm=float(np.linalg.norm(fit.alpha)),
                               dual_l2_norm=l2, effective_rank=fit.effective_rank,
                               picard=picard)
