"""G-computation: simulate counterfactual outcomes from fitted Q and g, then fit the MSM."""

from __future__ import annotations

import warnings

import numpy as np

from .. import glm
from ..data import PanelDataset, PanelError
from ..design import MsmSpec, design_matrix
from ..montecarlo import CounterfactualDraws, counterfactual_means
from ..treatment import TreatmentModel
from .common import EstimateReport, RegimenGrid
from .qmodel import QModel

__all__ = ["gcomp_estimate", "fit_msm_to_draws", "MIN_DRAWS", "GcompWarning"]

MIN_DRAWS = 1000


class GcompWarning(UserWarning):
    """Too few Monte Carlo draws for the Monte Carlo error to be negligible."""


def _family(spec: MsmSpec) -> str:
    # counterfactual means are fractions, fitted by the logistic quasi-likelihood
    return "gaussian_identity" if spec.link == "identity" else "bernoulli_logit"


def _rows_for_time(spec, t, scores, y, weight, v=None):
    """Design, response and weights for all regimens at ``t``; ``y`` is (R,) or (M, R)."""
    R = scores.shape[0]
    if v is None:
        return design_matrix(spec, t, scores), y, np.full(R, float(weight))
    Mr = v.shape[0]
    X = design_matrix(spec, t, np.tile(scores, (Mr, 1)), np.repeat(v, R, axis=0))
    return X, y.ravel(), np.ones(Mr * R)


def fit_msm_to_draws(
    spec: MsmSpec,
    draws: CounterfactualDraws,
    scores: np.ndarray,
    sums: np.ndarray | None = None,
    count: int | None = None,
    rows: list | None = None,
    controls: glm.GlmControls | None = None,
) -> tuple[np.ndarray, bool]:
    """Regress simulated counterfactual means on the MSM design.

    Without V the regression runs on (t, regimen) cell means with equal
    weights, which has the same solution as the replicate-level regression.
    Returns ``(beta, converged)``; beta is (p,) pooled or (len(times), p).
    """
    times = draws.times
    if sums is None:
        sums, count = draws.chunk_sums.sum(axis=0), draws.M
    if rows is None:
        rows = draws.rows
    family = _family(spec)
    blocks = []
    for k, t in enumerate(times):
        if rows is None:
            blocks.append(_rows_for_time(spec, t, scores, sums[k] / count, count))
        else:
            v, y = rows[k]
            blocks.append(_rows_for_time(spec, t, scores, y, 1.0, v))

    def solve(parts):
        X = np.vstack([b[0] for b in parts])
        y = np.concatenate([b[1] for b in parts])
        w = np.concatenate([b[2] for b in parts])
        fit = glm.fit(glm.GlmProblem(X, y, family, w), controls)
        return fit.beta, fit.converged

    if spec.mode == "pooled":
        return solve(blocks)
    out = [solve([b]) for b in blocks]
    return np.vstack([b for b, _ in out]), all(c for _, c in out)


def gcomp_estimate(
    data: PanelDataset,
    spec: MsmSpec,
    qmodel: QModel,
    gmodel: TreatmentModel | None,
    grid: RegimenGrid | None = None,
    M: int = 10_000,
    seed: int = 0,
    threads: int = 1,
    split: bool = True,
) -> EstimateReport:
    """Monte Carlo G-computation of the MSM coefficients.

    Pre-window treatments are drawn from the fitted ``gmodel`` (they are
    left random in the target parameter); window treatments are set to each
    regimen of ``grid``.  ``gmodel`` may be ``None`` only when no target
    has a pre-window segment (``s = t + 1`` for every target).
    """
    spec.validate(data)
    window = spec.window
    grid = grid or RegimenGrid.full(data.levels, window.s)
    if grid.s != window.s:
        raise PanelError(f"regimen grid has length {grid.s}, window size is {window.s}")
    if M < 1:
        raise PanelError("M must be positive")
    if M < MIN_DRAWS:
        warnings.warn(f"G-computation with M={M} < {MIN_DRAWS}: Monte Carlo noise may dominate", GcompWarning)
    needs_g = any(window.start(t) > 0 for t in window.targets)
    if gmodel is None and needs_g:
        raise PanelError("a treatment model is required when targets have a pre-window segment")
    if gmodel is not None and tuple(gmodel.levels.labels) != tuple(data.levels.labels):
        raise PanelError("treatment model and data disagree on treatment levels")
    model = qmodel.sequential(gmodel.as_law() if gmodel is not None else None)
    draws = counterfactual_means(
        model, window, grid.regimens, M, seed, baseline=qmodel.baseline,
        vspec=spec.vspec, split=split, threads=threads,
    )
    beta, converged = fit_msm_to_draws(spec, draws, grid.scores())
    messages = list(qmodel.messages)
    if not qmodel.converged:
        messages.append("a Q model fit did not converge")
    if gmodel is not None and not gmodel.denominator.converged:
        messages.append("the treatment model fit did not converge")
    return EstimateReport(
        estimator="gcomp",
        mode=spec.mode,
        link=spec.link,
        term_names=spec.term_names,
        beta=beta,
        times=window.targets,
        s=window.s,
        n_units=data.n,
        monte_carlo_draws=M,
        seed=seed,
        converged=bool(converged and qmodel.converged),
        messages=messages,
        extra={"regimens": grid.labels(), "split": split},
    )
