"""End-to-end estimation: fit the nuisance models a configuration asks for, then estimate.

:func:`run_estimator` is the closure the bootstrap re-runs on every
resample, so nuisance models are always refitted with the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import PanelDataset, PanelError, load_panel
from .design import MsmSpec
from .estimators import (
    EstimateReport,
    QSpec,
    RegimenGrid,
    dr_estimate,
    fit_q,
    gcomp_estimate,
    iptw_pooled,
    iptw_stratified,
    naive_regression,
)
from .simulation import simulate_panel
from .treatment import GFeatureSpec, TreatmentModel, fit_g

__all__ = ["EstimatorSettings", "run_estimator", "estimator_closure", "settings_from_config", "load_data"]


@dataclass
class EstimatorSettings:
    """Everything an estimator needs besides the data."""

    spec: MsmSpec
    g_spec: GFeatureSpec | None = None
    q_spec: QSpec | None = None
    numerator: GFeatureSpec | None = None
    style: str = "unstabilized"
    truncation: object = None
    M: int = 10_000
    M_aug: int = 100
    grid: list | None = None
    threads: int = 1


def fit_treatment(data: PanelDataset, st: EstimatorSettings) -> TreatmentModel:
    if st.g_spec is None:
        raise PanelError("treatment.terms: a treatment model specification is required")
    return fit_g(
        data,
        st.g_spec,
        registry=st.spec.registry,
        numerator=st.numerator if st.style == "stabilized" else None,
        window=st.spec.window,
        vspec=st.spec.vspec,
    )


def run_estimator(name: str, data: PanelDataset, st: EstimatorSettings, seed: int = 0) -> EstimateReport:
    """Fit g and/or Q as needed, then run estimator ``name`` (iptw, gcomp, dr or naive)."""
    spec = st.spec
    if name == "naive":
        return naive_regression(data, spec)
    if name == "iptw":
        g = fit_treatment(data, st)
        if spec.mode == "pooled":
            return iptw_pooled(data, spec, g, st.style, st.truncation)
        return iptw_stratified(data, spec, g, style=st.style, truncation=st.truncation)
    if st.q_spec is None:
        raise PanelError("q: a Q model specification is required")
    q = fit_q(data, st.q_spec, spec.registry)
    if name == "gcomp":
        needs_g = any(spec.window.start(t) > 0 for t in spec.window.targets)
        g = fit_treatment(data, st) if needs_g or st.g_spec is not None else None
        grid = None if st.grid is None else RegimenGrid.from_labels(data.levels, st.grid)
        return gcomp_estimate(data, spec, q, g, grid, st.M, seed, threads=st.threads)
    if name == "dr":
        g = fit_treatment(data, st)
        return dr_estimate(data, spec, q, g, st.M_aug, seed, style=st.style, threads=st.threads)
    raise PanelError(f"unknown estimator {name!r}")


def estimator_closure(name: str, st: EstimatorSettings) -> Callable[[PanelDataset, int], EstimateReport]:
    def run(data: PanelDataset, seed: int) -> EstimateReport:
        return run_estimator(name, data, st, seed)

    return run


def settings_from_config(cfg, K: int, s: int | None = None, M: int | None = None) -> EstimatorSettings:
    return EstimatorSettings(
        spec=cfg.msm(K, s),
        g_spec=cfg.g_spec,
        q_spec=cfg.q_spec,
        numerator=cfg.numerator,
        style=cfg.weight_style,
        truncation=cfg.truncation,
        M=cfg.M if M is None else M,
        M_aug=cfg.M_aug,
        grid=cfg.grid,
        threads=cfg.threads,
    )


def load_data(cfg) -> PanelDataset:
    """Observed data from ``data.path`` or, failing that, simulated from ``dgp`` with ``simulate.n``."""
    if cfg.data_path is not None:
        return load_panel(cfg.data_path, cfg.schema)
    if cfg.dgp is not None and cfg.simulate_n:
        return simulate_panel(cfg.dgp, cfg.simulate_n, cfg.seed)
    raise PanelError("data: give data.path, or dgp together with simulate.n")


def agreement(reports: list[EstimateReport]) -> dict:
    """Pairwise max-abs differences between the estimates of several estimators."""
    out = {}
    for i, a in enumerate(reports):
        for b in reports[i + 1 :]:
            out[f"{a.estimator}-{b.estimator}"] = float(np.max(np.abs(a.flat_beta() - b.flat_beta())))
    return out
