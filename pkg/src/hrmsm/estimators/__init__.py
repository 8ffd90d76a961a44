"""IPTW, G-computation and double robust estimators of MSM coefficients."""

from .common import GRID_LIMIT, EstimateReport, RegimenGrid, msm_response, observed_design
from .dr import SingularSystemError, completion_means, dr_estimate
from .gcomp import GcompWarning, fit_msm_to_draws, gcomp_estimate
from .iptw import iptw_pooled, iptw_stratified, naive_regression
from .qmodel import QChannel, QModel, QSpec, fit_q

__all__ = [
    "GRID_LIMIT",
    "EstimateReport",
    "RegimenGrid",
    "msm_response",
    "observed_design",
    "SingularSystemError",
    "completion_means",
    "dr_estimate",
    "GcompWarning",
    "fit_msm_to_draws",
    "gcomp_estimate",
    "iptw_pooled",
    "iptw_stratified",
    "naive_regression",
    "QChannel",
    "QModel",
    "QSpec",
    "fit_q",
]
