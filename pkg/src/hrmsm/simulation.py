"""Structural-equation data generator, the brute-force oracle and t-specific view checks.

Units are generated by :class:`hrmsm.engine.SequentialModel` from a bank
of per-(unit, time, channel) noise.  Re-running a unit on the same noise
with treatments forced to a regimen yields its counterfactual trajectory,
so consistency (forcing the observed treatments reproduces the observed
data) and temporal ordering hold by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from . import glm
from .data import (
    PanelDataset,
    PanelError,
    TreatmentLevels,
    VSpec,
    WindowSpec,
    build_t_view,
)
from .design import MsmSpec, TimeFnRegistry
from .engine import BaselineLaw, Law, NoiseBank, SequentialModel
from .features import History, check_features, feature_matrix
from .montecarlo import counterfactual_means

__all__ = [
    "DgpSpec",
    "load_dgp",
    "builtin_config",
    "simulate_panel",
    "simulate_histories",
    "OracleRequest",
    "OracleReport",
    "oracle_beta",
    "oracle_means",
    "AppendixBReport",
    "verify_appendix_b",
]

_OUTCOME_LAWS = {"continuous": ("gaussian",), "binary": ("bernoulli",), "counts": ("binomial",)}


def _law_from_dict(d: dict, what: str, categorical: bool = False) -> Law:
    d = dict(d)
    family = d.pop("family")
    coef = d.pop("coef", None)
    kw = {}
    if coef is not None:
        if not isinstance(coef, dict) or not coef:
            raise PanelError(f"{what}.coef must map feature terms to coefficients")
        kw["terms"] = tuple(coef)
        vals = [coef[k] for k in coef]
        kw["coef"] = np.array([np.atleast_1d(v) for v in vals], dtype=float) if categorical else np.array(vals, dtype=float)
    if "sd" in d:
        kw["sd"] = float(d.pop("sd"))
    if "value" in d:
        kw["value"] = float(d.pop("value"))
    if "offset" in d:
        kw["offset"] = float(d.pop("offset"))
    if "trials" in d:
        kw["trials"] = _law_from_dict(d.pop("trials"), f"{what}.trials")
    if d:
        raise PanelError(f"{what}: unknown keys {sorted(d)}")
    try:
        return Law(family=family, **kw)
    except PanelError as exc:
        raise PanelError(f"{what}: {exc}") from None


def _baseline_from_dict(d: dict, what: str) -> BaselineLaw:
    d = dict(d)
    dist = d.pop("dist")
    order = {"normal": ("mean", "sd"), "bernoulli": ("p",), "uniform": ("low", "high"), "constant": ("value",)}
    if dist not in order:
        raise PanelError(f"{what}: unknown baseline distribution {dist!r}")
    try:
        params = tuple(float(d.pop(k)) for k in order[dist])
    except KeyError as exc:
        raise PanelError(f"{what}: missing key {exc.args[0]!r}") from None
    if d:
        raise PanelError(f"{what}: unknown keys {sorted(d)}")
    return BaselineLaw(dist, params)


@dataclass
class DgpSpec:
    """A structural data-generating process with its true laws.

    Covariates are generated in declared order within each time slice,
    followed by the outcome; ``hidden`` covariates are generated but not
    released in the observed panel (used only for the negative control,
    which must set ``sra_violation``).
    """

    name: str
    K: int
    levels: TreatmentLevels
    covariate_names: tuple[str, ...]
    baseline: tuple[BaselineLaw, ...]
    covariate_laws: tuple[Law, ...]
    treatment_law: Law
    outcome_law: Law
    outcome_kind: str = "continuous"
    outcome_name: str = "Y"
    hidden: tuple[str, ...] = ()
    sra_violation: bool = False
    registry: TimeFnRegistry = field(default_factory=TimeFnRegistry.default)
    source: dict | None = None

    def __post_init__(self):
        self.covariate_names = tuple(self.covariate_names)
        self.hidden = tuple(self.hidden)
        self.validate()

    def validate(self) -> "DgpSpec":
        names = self.covariate_names
        if self.K < 0:
            raise PanelError("K must be >= 0")
        if len(self.baseline) != len(names) or len(self.covariate_laws) != len(names):
            raise PanelError("every covariate needs a baseline law and a transition law")
        if set(self.hidden) - set(names):
            raise PanelError("hidden covariates must be declared covariates")
        for c, law in enumerate(self.covariate_laws):
            if law.family not in ("gaussian", "bernoulli", "static", "constant"):
                raise PanelError(f"covariate {names[c]}: family {law.family!r} not allowed")
            check_features(law.terms, names, "q", self.registry, position=c)
        tl = self.treatment_law
        want = "bernoulli" if len(self.levels) == 2 else "categorical"
        if tl.family != want:
            raise PanelError(f"treatment law must be {want} for {len(self.levels)} levels")
        if tl.family == "categorical" and tl.coef.shape[1] != len(self.levels) - 1:
            raise PanelError("categorical treatment needs one coefficient column per non-reference level")
        check_features(tl.terms, names, "g", self.registry)
        uses_hidden = any(
            a.kind == "l" and a.name in self.hidden for term in tl.terms for a in term.factors
        )
        if uses_hidden and not self.sra_violation:
            raise PanelError("treatment law uses hidden covariates; set sra_violation to allow this")
        if self.outcome_law.family not in _OUTCOME_LAWS[self.outcome_kind] + ("constant",):
            raise PanelError(f"outcome law family {self.outcome_law.family!r} does not fit {self.outcome_kind}")
        if self.outcome_kind == "counts" and self.outcome_law.trials is None:
            raise PanelError("counts outcomes need a trials law")
        check_features(self.outcome_law.terms, names, "q", self.registry, position=None)
        return self

    @property
    def observed_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.covariate_names if n not in self.hidden)

    def model(self) -> SequentialModel:
        return SequentialModel(
            K=self.K,
            levels=self.levels,
            covariate_names=self.covariate_names,
            covariate_laws=self.covariate_laws,
            treatment_law=self.treatment_law,
            outcome_law=self.outcome_law,
            outcome_kind=self.outcome_kind,
            registry=self.registry,
            baseline=self.baseline,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        d = dict(d)
        try:
            levels = TreatmentLevels.from_mapping({str(k): v for k, v in d["treatment_levels"].items()})
            K = int(d["K"])
            covs = d.get("covariates", [])
            outcome = d.get("outcome", {})
            kind = outcome.get("kind", "continuous")
            categorical = len(levels) > 2
            return cls(
                name=str(d.get("name", "dgp")),
                K=K,
                levels=levels,
                covariate_names=tuple(c["name"] for c in covs),
                baseline=tuple(
                    _baseline_from_dict(c["baseline"], f"covariates[{i}].baseline") for i, c in enumerate(covs)
                ),
                covariate_laws=tuple(_law_from_dict(c["law"], f"covariates[{i}].law") for i, c in enumerate(covs)),
                treatment_law=_law_from_dict(d["treatment"], "treatment", categorical=categorical),
                outcome_law=_law_from_dict(d["outcome_law"], "outcome_law"),
                outcome_kind=kind,
                outcome_name=str(outcome.get("name", "Y")),
                hidden=tuple(d.get("hidden", ())),
                sra_violation=bool(d.get("sra_violation", False)),
                registry=TimeFnRegistry.from_config(d["time_functions"])
                if "time_functions" in d
                else TimeFnRegistry.default(),
                source=d,
            )
        except KeyError as exc:
            raise PanelError(f"DGP config is missing key {exc.args[0]!r}") from None


def builtin_config(name: str) -> Path:
    """Path of a configuration file shipped with the package."""
    path = resources.files("hrmsm") / "configs" / name
    if not path.is_file():
        raise PanelError(f"no built-in config named {name!r}")
    return Path(str(path))


def load_dgp(source) -> DgpSpec:
    """Load a DGP from a mapping, a YAML path, or a built-in name such as ``reference``."""
    if isinstance(source, DgpSpec):
        return source
    if isinstance(source, dict):
        return DgpSpec.from_dict(source)
    path = Path(source)
    if not path.exists():
        path = builtin_config(f"dgp_{source}.yaml")
    with open(path) as fh:
        return DgpSpec.from_dict(yaml.safe_load(fh))


# ---------------------------------------------------------------------------
# observed data


def simulate_histories(dgp: DgpSpec, n: int, seed: int) -> tuple[History, NoiseBank]:
    """Full trajectories (hidden covariates included) and the noise that produced them."""
    model = dgp.model()
    rng = np.random.default_rng(seed)
    noise = NoiseBank.draw(rng, n, dgp.K + 2, model.n_channels)
    hist = model.new_history(n)
    model.draw_baseline(hist, noise)
    model.forward(hist, 0, dgp.K + 1, noise, outcomes=True, last="draw")
    return hist, noise


def _panel(dgp: DgpSpec, hist: History, include_hidden: bool) -> PanelDataset:
    names = dgp.covariate_names if include_hidden else dgp.observed_names
    cols = [dgp.covariate_names.index(n) for n in names]
    return PanelDataset(
        ids=np.arange(hist.N),
        treatments=hist.A,
        covariates=hist.L[:, :, cols],
        outcome=hist.Y,
        covariate_names=names,
        levels=dgp.levels,
        outcome_kind=dgp.outcome_kind,
        trials=hist.trials,
        outcome_name=dgp.outcome_name,
    )


def simulate_panel(dgp: DgpSpec, n: int, seed: int, include_hidden: bool = False) -> PanelDataset:
    """``n`` i.i.d. units L(0), A(0), L(1), ..., A(K), L(K+1); deterministic given ``seed``."""
    if n < 1:
        raise PanelError("n must be positive")
    hist, _ = simulate_histories(dgp, n, seed)
    return _panel(dgp, hist, include_hidden)


# ---------------------------------------------------------------------------
# oracle


@dataclass
class OracleRequest:
    dgp: DgpSpec
    window: WindowSpec
    terms: Sequence[str]
    link: str = "identity"
    mode: str = "pooled"
    vspec: VSpec = field(default_factory=VSpec)
    grid: np.ndarray | None = None
    M_oracle: int = 100_000
    seed: int = 0
    batches: int = 20

    def spec(self) -> MsmSpec:
        return MsmSpec(self.mode, self.link, tuple(self.terms), self.window, self.vspec, self.dgp.registry)


@dataclass
class OracleReport:
    """True MSM coefficients (projection onto the MSM) with batch-means MC standard errors."""

    beta: np.ndarray
    se: np.ndarray
    term_names: list[str]
    times: tuple[int, ...]
    M: int
    seed: int
    mode: str
    prewindow_lengths: dict[int, int]
    batches: int
    cell_means: np.ndarray
    regimens: np.ndarray

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "se": self.se.tolist(),
            "term_names": self.term_names,
            "times": list(self.times),
            "M": self.M,
            "seed": self.seed,
            "mode": self.mode,
            "prewindow_lengths": {str(k): v for k, v in self.prewindow_lengths.items()},
            "batches": self.batches,
        }


def _grid(dgp, window, grid):
    from .estimators.common import RegimenGrid

    if grid is None:
        return RegimenGrid.full(dgp.levels, window.s).regimens
    return np.asarray(grid, dtype=np.int64)


def oracle_beta(req: OracleRequest, threads: int = 1) -> OracleReport:
    """Brute-force true coefficients.

    Each replicate draws L(0) and the pre-window segment with treatments
    from the TRUE g, then every grid regimen is imposed on the window and
    E[Y(t+1) | simulated past] under the true laws is recorded.  The MSM is
    fitted to the pooled counterfactual means; with a misspecified MSM this
    is the best-approximation projection.
    """
    from .estimators.gcomp import fit_msm_to_draws

    spec = req.spec()
    window = req.window.validate(req.dgp.K)
    regimens = _grid(req.dgp, window, req.grid)
    R = regimens.shape[0]
    per_chunk = -(-req.M_oracle // max(req.batches, 1))
    draws = counterfactual_means(
        req.dgp.model(), window, regimens, req.M_oracle, req.seed,
        vspec=req.vspec, threads=threads, rows_per_chunk=per_chunk * R,
    )
    scores = req.dgp.levels.scores[regimens]
    beta, _ = fit_msm_to_draws(spec, draws, scores)
    batch = []
    for c in range(len(draws.chunk_counts)):
        rows = None if draws.rows is None else draws.chunk_rows[c]
        b, _ = fit_msm_to_draws(spec, draws, scores, draws.chunk_sums[c], int(draws.chunk_counts[c]), rows)
        batch.append(b)
    batch = np.array(batch)
    nb = batch.shape[0]
    se = batch.std(axis=0, ddof=1) / np.sqrt(nb) if nb > 1 else np.full(beta.shape, np.nan)
    return OracleReport(
        beta=beta,
        se=se,
        term_names=spec.term_names,
        times=window.targets,
        M=req.M_oracle,
        seed=req.seed,
        mode=req.mode,
        prewindow_lengths=draws.prewindow_lengths,
        batches=nb,
        cell_means=draws.means(),
        regimens=regimens,
    )


def oracle_means(
    dgp: DgpSpec, window: WindowSpec, grid=None, M: int = 100_000, seed: int = 0, batches: int = 20
) -> tuple[np.ndarray, np.ndarray]:
    """Counterfactual means per (t, regimen) from fully independent draws, with MC SEs.

    A second pipeline, independent of the trajectory-splitting one: every
    (t, regimen) cell is simulated from scratch.
    """
    window = window.validate(dgp.K)
    regimens = _grid(dgp, window, grid)
    per_chunk = -(-M // batches)
    draws = counterfactual_means(
        dgp.model(), window, regimens, M, seed, split=False, rows_per_chunk=per_chunk * regimens.shape[0]
    )
    means = draws.means()
    batch = draws.chunk_sums / draws.chunk_counts[:, None, None]
    se = batch.std(axis=0, ddof=1) / np.sqrt(batch.shape[0])
    return means, se


# ---------------------------------------------------------------------------
# t-specific view checks


@dataclass
class AppendixBReport:
    n_units: int
    n_checks: int
    mismatches: list[tuple] = field(default_factory=list)
    coef_max_diff: float = 0.0
    tolerance: float = 1e-10

    @property
    def passed(self) -> bool:
        return not self.mismatches and self.coef_max_diff <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_units": self.n_units,
            "n_checks": self.n_checks,
            "mismatches": [list(map(str, m)) for m in self.mismatches[:100]],
            "n_mismatches": len(self.mismatches),
            "coef_max_diff": self.coef_max_diff,
        }


def _view_past(view, j: int, through_covariates: bool):
    """Conventional-index arrays rebuilt from the view: A(0..j-1), L(0..j-1 or j)."""
    a0, l0 = view.baseline_block
    start = view.start
    A = np.concatenate([a0, view.window_treatments[: j - start]])
    stop = j + 1 if through_covariates else j
    Lw = view.window_covariates[: max(stop - start - 1, 0)]
    L = np.concatenate([l0, Lw])[:stop]
    return A, L


def _one_row_history(A, L, K, p, scores, j):
    hist = History.empty(1, K, p, scores)
    hist.A[0, : len(A)] = A
    hist.L[0, : len(L)] = L
    return hist


def _same(x, y) -> bool:
    x, y = np.asarray(x), np.asarray(y)
    return x.shape == y.shape and bool(np.all((x == y) | (np.isnan(x) & np.isnan(y)) if x.dtype.kind == "f" else x == y))


def verify_appendix_b(
    dgp: DgpSpec,
    window: WindowSpec,
    n_check: int = 50,
    seed: int = 0,
    view_builder: Callable = build_t_view,
) -> AppendixBReport:
    """Check that the t-specific layout reproduces the conventional conditioning sets.

    (a) For each sampled unit, target ``t`` and inner index ``j``, the past of
    L(j) (j in t-s+2..t+1) and of A(j) (j in t-s+1..t) rebuilt from the view
    equals the conventional past element-wise, as do the values themselves
    and the TRUE density / probability evaluated on either.  (b) The
    treatment model fitted on view-assembled rows equals the fit on the
    conventional rows to 1e-10.
    """
    window = window.validate(dgp.K)
    model = dgp.model()
    hist, _ = simulate_histories(dgp, n_check, seed)
    data = _panel(dgp, hist, include_hidden=True)
    K, p, s = dgp.K, len(dgp.covariate_names), window.s
    scores = dgp.levels.scores
    report = AppendixBReport(n_units=n_check, n_checks=0)
    conv_hist = History.from_panel(data)
    X_conv, X_view, y_conv, y_view = [], [], [], []
    for i in range(n_check):
        unit = data.unit(i)
        for t in window.targets:
            view = view_builder(unit, window, t)
            start = t - s + 1
            # outcome Y(t+1) and window outcomes
            report.n_checks += 1
            if not _same(np.atleast_1d(view.outcome), np.atleast_1d(unit.outcome.at(t + 1))):
                report.mismatches.append((unit.id, t, t + 1, "outcome"))
            for j in range(start, t + 1):
                # treatment A(j) given A(0..j-1), L(0..j)
                A_v, L_v = _view_past(view, j, through_covariates=True)
                A_c, L_c = unit.treatments[:j], unit.covariates[: j + 1]
                report.n_checks += 1
                a_val = view.window_treatments[j - start]
                if not (_same(A_v, A_c) and _same(L_v, L_c) and a_val == unit.treatments[j]):
                    report.mismatches.append((unit.id, t, j, "treatment conditioning set"))
                    continue
                h_v = _one_row_history(A_v, L_v, K, p, scores, j)
                h_v.A[0, j] = a_val
                h_c = _one_row_history(A_c, L_c, K, p, scores, j)
                h_c.A[0, j] = unit.treatments[j]
                if model.treatment_prob_observed(h_v, j)[0] != model.treatment_prob_observed(h_c, j)[0]:
                    report.mismatches.append((unit.id, t, j, "treatment probability"))
                X_view.append(feature_matrix(dgp.treatment_law.terms, h_v, j, dgp.covariate_names, dgp.registry)[0])
                y_view.append(a_val)
                X_conv.append(
                    feature_matrix(dgp.treatment_law.terms, conv_hist.take([i]), j, dgp.covariate_names, dgp.registry)[0]
                )
                y_conv.append(unit.treatments[j])
            for j in range(start + 1, t + 2):
                # covariates L(j) given A(0..j-1), L(0..j-1)
                A_v, L_v = _view_past(view, j, through_covariates=False)
                A_c, L_c = unit.treatments[:j], unit.covariates[:j]
                l_val = view.window_covariates[j - start - 1]
                report.n_checks += 1
                if not (_same(A_v, A_c) and _same(L_v, L_c) and _same(l_val, unit.covariates[j])):
                    report.mismatches.append((unit.id, t, j, "covariate conditioning set"))
                    continue
                h_v = _one_row_history(A_v, L_v, K, p, scores, j)
                h_c = _one_row_history(A_c, L_c, K, p, scores, j)
                for c in range(p):
                    dv = model.covariate_log_density(h_v, j, c, np.array([l_val[c]]))[0]
                    h_v.L[0, j, c] = l_val[c]
                    dc = model.covariate_log_density(h_c, j, c, np.array([unit.covariates[j, c]]))[0]
                    h_c.L[0, j, c] = unit.covariates[j, c]
                    if dv != dc:
                        report.mismatches.append((unit.id, t, j, f"density of {dgp.covariate_names[c]}"))
    if X_conv:
        fam = "bernoulli_logit" if len(dgp.levels) == 2 else "multinomial_logit"
        controls = glm.GlmControls(tol=1e-12)
        fc = glm.fit(glm.GlmProblem(np.array(X_conv), np.array(y_conv), fam, n_levels=len(dgp.levels)), controls)
        fv = glm.fit(glm.GlmProblem(np.array(X_view), np.array(y_view), fam, n_levels=len(dgp.levels)), controls)
        report.coef_max_diff = float(np.max(np.abs(np.asarray(fc.beta) - np.asarray(fv.beta))))
    return report
