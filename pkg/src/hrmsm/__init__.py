"""History-restricted marginal structural models.

Estimate the effect of the last ``s`` treatments on a time-dependent
outcome by IPTW, G-computation or double robust estimation, and check the
estimators against a structural-equation simulator with exact
counterfactuals.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .data import (
    PanelDataset,
    PanelError,
    PanelSchema,
    TreatmentLevels,
    TView,
    VAtom,
    VSpec,
    WindowSpec,
    build_t_view,
    eval_v,
    flatten_view,
    load_panel,
    write_panel,
)
from .design import MsmSpec, TimeFnRegistry, design_matrix, design_row, mean_response
from .effects import effect_curve
from .estimators import (
    EstimateReport,
    QChannel,
    QSpec,
    RegimenGrid,
    dr_estimate,
    fit_q,
    gcomp_estimate,
    iptw_pooled,
    iptw_stratified,
    naive_regression,
)
from .inference import BootstrapResult, bootstrap
from .simulation import DgpSpec, OracleRequest, load_dgp, oracle_beta, simulate_panel, verify_appendix_b
from .treatment import GFeatureSpec, compute_weights, eta_diagnostic, fit_g, window_probability

__all__ = [
    "__version__",
    "PanelDataset",
    "PanelError",
    "PanelSchema",
    "TreatmentLevels",
    "TView",
    "VAtom",
    "VSpec",
    "WindowSpec",
    "build_t_view",
    "eval_v",
    "flatten_view",
    "load_panel",
    "write_panel",
    "MsmSpec",
    "TimeFnRegistry",
    "design_matrix",
    "design_row",
    "mean_response",
    "effect_curve",
    "EstimateReport",
    "QChannel",
    "QSpec",
    "RegimenGrid",
    "dr_estimate",
    "fit_q",
    "gcomp_estimate",
    "iptw_pooled",
    "iptw_stratified",
    "naive_regression",
    "BootstrapResult",
    "bootstrap",
    "DgpSpec",
    "OracleRequest",
    "load_dgp",
    "oracle_beta",
    "simulate_panel",
    "verify_appendix_b",
    "GFeatureSpec",
    "compute_weights",
    "eta_diagnostic",
    "fit_g",
    "window_probability",
]
