"""IPTW estimators (stratified and pooled) and the unweighted association regression."""

from __future__ import annotations

import numpy as np

from .. import glm
from ..data import PanelDataset, PanelError
from ..design import MsmSpec
from ..treatment import TreatmentModel, WeightReport, compute_weights
from .common import EstimateReport, msm_response, observed_design

__all__ = ["iptw_stratified", "iptw_pooled", "naive_regression"]


def _fit(spec, X, y, w, controls, context):
    if int((w > 0).sum()) < X.shape[1]:
        raise PanelError(f"{context}: fewer positive-weight observations than coefficients")
    return glm.fit(glm.GlmProblem(X, y, spec.glm_family(), w), controls)


def _weights(data, spec, gmodel, style, truncation, weights):
    if weights is not None:
        return weights
    return compute_weights(gmodel, data, spec.window, style, truncation)


def _report(name, spec, data, beta, times, fits, weights: WeightReport | None):
    return EstimateReport(
        estimator=name,
        mode=spec.mode,
        link=spec.link,
        term_names=spec.term_names,
        beta=beta,
        times=tuple(times),
        s=spec.window.s,
        n_units=data.n,
        weights=None if weights is None else weights.summary(),
        converged=all(f.converged for f in fits),
        messages=[m for f in fits for m in f.messages],
    )


def iptw_stratified(
    data: PanelDataset,
    spec: MsmSpec,
    gmodel: TreatmentModel,
    t: int | None = None,
    style: str = "unstabilized",
    truncation=None,
    weights: WeightReport | None = None,
    controls: glm.GlmControls | None = None,
) -> EstimateReport:
    """Weighted regression of Y(t+1) on the MSM design, separately for each target ``t``.

    With ``t`` given only that target is estimated; otherwise every ``t`` in
    the window's target set gets its own row of coefficients.
    """
    if spec.mode != "stratified":
        raise PanelError("iptw_stratified needs a stratified MSM")
    spec.validate(data)
    times = spec.window.targets if t is None else (t,)
    if t is not None and t not in spec.window.targets:
        raise PanelError(f"t={t} is not in the target set")
    wr = _weights(data, spec, gmodel, style, truncation, weights)
    fits = []
    for tt in times:
        X = observed_design(data, spec, tt)
        fits.append(_fit(spec, X, msm_response(data, spec, tt), wr.column(tt), controls, f"t={tt}"))
    beta = np.vstack([f.beta for f in fits])
    return _report("iptw", spec, data, beta, times, fits, wr)


def iptw_pooled(
    data: PanelDataset,
    spec: MsmSpec,
    gmodel: TreatmentModel,
    style: str = "unstabilized",
    truncation=None,
    weights: WeightReport | None = None,
    controls: glm.GlmControls | None = None,
) -> EstimateReport:
    """One weighted regression over all (unit, t) rows, t in the target set."""
    if spec.mode != "pooled":
        raise PanelError("iptw_pooled needs a pooled MSM")
    spec.validate(data)
    times = spec.window.targets
    wr = _weights(data, spec, gmodel, style, truncation, weights)
    X = np.vstack([observed_design(data, spec, t) for t in times])
    y = np.concatenate([msm_response(data, spec, t) for t in times])
    w = np.concatenate([wr.column(t) for t in times])
    fit = _fit(spec, X, y, w, controls, "pooled IPTW")
    return _report("iptw", spec, data, fit.beta, times, [fit], wr)


def naive_regression(
    data: PanelDataset, spec: MsmSpec, controls: glm.GlmControls | None = None
) -> EstimateReport:
    """Unweighted regression of the outcome on the observed window (no confounding control)."""
    spec.validate(data)
    times = spec.window.targets
    blocks = [(observed_design(data, spec, t), msm_response(data, spec, t)) for t in times]
    if spec.mode == "pooled":
        X = np.vstack([b[0] for b in blocks])
        y = np.concatenate([b[1] for b in blocks])
        fits = [_fit(spec, X, y, np.ones(X.shape[0]), controls, "naive regression")]
        beta = fits[0].beta
    else:
        fits = [_fit(spec, X, y, np.ones(X.shape[0]), controls, f"t={t}") for (X, y), t in zip(blocks, times)]
        beta = np.vstack([f.beta for f in fits])
    return _report("naive", spec, data, beta, times, fits, None)
