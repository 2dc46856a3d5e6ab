"""Covariance and principal-component estimation for sparse, noisy, possibly
correlated functional data, with an approximate leave-one-curve-out
Kullback-Leibler criterion for choosing the bandwidth and rank."""

from .covariance import CovarianceSurface, DiagonalCurve, estimate_diag, estimate_offdiag, merge
from .crossval import CvTable, approx_loocv, exact_loocv, kl_loss, pred_cv, select_model
from .dataio import read_long_csv, write_long_csv
from .eigen import EigenSystem, eigendecompose, modified_l2_loss
from .fit import CovarianceFit, FitConfig, fit_covariance, rule_of_thumb_config
from .kernels import BsplineKernel, DiagonalWeight, SummabilityKernel
from .noise import SigmaConfig, estimate_sigma2, oblique_diagonal
from .presmooth import ObservedCurve, make_grid, presmooth_all
from .simulate import SimulationConfig, simulate_dataset

__all__ = [
    "BsplineKernel",
    "CovarianceFit",
    "CovarianceSurface",
    "CvTable",
    "DiagonalCurve",
    "DiagonalWeight",
    "EigenSystem",
    "FitConfig",
    "ObservedCurve",
    "SigmaConfig",
    "SimulationConfig",
    "SummabilityKernel",
    "approx_loocv",
    "eigendecompose",
    "estimate_diag",
    "estimate_offdiag",
    "estimate_sigma2",
    "exact_loocv",
    "fit_covariance",
    "kl_loss",
    "make_grid",
    "merge",
    "modified_l2_loss",
    "oblique_diagonal",
    "pred_cv",
    "presmooth_all",
    "read_long_csv",
    "rule_of_thumb_config",
    "select_model",
    "simulate_dataset",
    "write_long_csv",
]

__version__ = "0.1.0"
