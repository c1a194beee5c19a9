"""Proximal counterfactual distribution, quantile and CVaR inference."""

from .bands import (BandSet, QuantileBands, cdf_band, estimated_density_delta_band, invert_band,
                    isotonic_project, monotone_envelope, multiplier_critical_value, pava,
                    pointwise_interval)
from .basis import BasisSpec, FoldStandardizer, build_basis
from .bridge import (MomentSystem, SolverConfig, assemble_moments, solve_pinv, solve_ridge,
                     solve_square, spectral_diagnostics)
from .data import Dataset, fit_preprocess, load_dataset, load_rhc, screen_covariates
from .estimator import (CdfProcessEstimate, CvarEstimate, NaiveAIPWEstimator,
                        ProximalDistributionEstimator, crossfit_cdf, cvar_estimate, make_folds,
                        naive_aipw_cdf, shortfall_process)

__version__ = "0.1.0"
