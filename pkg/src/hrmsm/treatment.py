"""Treatment mechanism g, window probabilities, IPT weights and ETA diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import glm
from .data import PanelDataset, PanelError, TreatmentLevels, VSpec, WindowSpec, v_matrix
from .design import TimeFnRegistry
from .engine import Law
from .features import FeatureTerm, History, check_features, feature_matrix, parse_features

__all__ = [
    "PROB_FLOOR",
    "GFeatureSpec",
    "TreatmentModel",
    "Truncation",
    "WeightReport",
    "EtaDiagnostic",
    "fit_g",
    "window_probability",
    "compute_weights",
    "eta_diagnostic",
]

PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class GFeatureSpec:
    """Feature terms for g(A(j) | past); see :mod:`hrmsm.features` for the grammar."""

    terms: tuple[FeatureTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", parse_features(self.terms))
        if not self.terms:
            raise PanelError("treatment model needs at least one feature term")

    @property
    def names(self) -> list[str]:
        return [str(t) for t in self.terms]


@dataclass
class _NumeratorFit:
    spec: GFeatureSpec
    fit: glm.GlmFit
    s: int
    vspec: VSpec


@dataclass
class TreatmentModel:
    """Fitted pooled categorical regression for g, plus an optional stabilisation numerator."""

    spec: GFeatureSpec
    denominator: glm.GlmFit
    levels: TreatmentLevels
    covariate_names: tuple[str, ...]
    registry: TimeFnRegistry
    times: tuple[int, ...]
    numerator: _NumeratorFit | None = None

    @property
    def denominator_fit(self) -> glm.GlmFit:
        return self.denominator

    @property
    def numerator_fit(self) -> glm.GlmFit | None:
        return None if self.numerator is None else self.numerator.fit

    def _proba(self, fit: glm.GlmFit, X: np.ndarray) -> np.ndarray:
        return fit.predict_proba(X)

    def step_probs(self, hist: History, j: int) -> np.ndarray:
        """(N, levels) denominator probabilities of A(j) given the observed past."""
        X = feature_matrix(self.spec.terms, hist, j, self.covariate_names, self.registry)
        return self._proba(self.denominator, X)

    def numerator_step_probs(self, hist: History, j: int, t: int, v: np.ndarray) -> np.ndarray:
        num = self._require_numerator()
        X = feature_matrix(
            num.spec.terms, hist, j, self.covariate_names, self.registry, v=v, a_floor=t - num.s + 1
        )
        return self._proba(num.fit, X)

    def _require_numerator(self) -> _NumeratorFit:
        if self.numerator is None:
            raise PanelError("treatment model has no stabilisation numerator")
        return self.numerator

    def as_law(self) -> Law:
        """The fitted denominator as a simulation law for :class:`hrmsm.engine.SequentialModel`."""
        family = "bernoulli" if len(self.levels) == 2 else "categorical"
        return Law(family=family, terms=self.spec.terms, coef=np.asarray(self.denominator.beta))

    def numerator_regimen_probs(self, t: int, regimens: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Numerator probability of each window regimen: (n, R) for V rows ``v`` (n, q)."""
        num = self._require_numerator()
        regimens = np.asarray(regimens, dtype=np.int64)
        R, s = regimens.shape
        n = v.shape[0]
        start = t - s + 1
        hist = History.empty(n * R, t, 0, self.levels.scores)
        hist.A[:, start : t + 1] = np.tile(regimens, (n, 1))
        vv = np.repeat(v, R, axis=0)
        out = np.ones(n * R)
        rows = np.arange(n * R)
        for j in range(start, t + 1):
            X = feature_matrix(
                num.spec.terms, hist, j, (), self.registry, v=vv, a_floor=start
            )
            out *= np.clip(self._proba(num.fit, X)[rows, hist.A[:, j]], PROB_FLOOR, 1 - PROB_FLOOR)
        return out.reshape(n, R)


def _glm_family(levels: TreatmentLevels) -> str:
    return "bernoulli_logit" if len(levels) == 2 else "multinomial_logit"


def _fit_categorical(X, y, levels, controls, context):
    problem = glm.GlmProblem(X, y, _glm_family(levels), n_levels=len(levels))
    try:
        return glm.fit(problem, controls)
    except glm.GlmError as exc:
        raise glm.GlmError(f"{context}: {exc}") from exc


def fit_g(
    data: PanelDataset,
    spec: GFeatureSpec | Sequence[str],
    times: Sequence[int] | None = None,
    registry: TimeFnRegistry | None = None,
    numerator: GFeatureSpec | Sequence[str] | None = None,
    window: WindowSpec | None = None,
    vspec: VSpec | None = None,
    controls: glm.GlmControls | None = None,
) -> TreatmentModel:
    """Pool all (unit, j) pairs for ``j`` in ``times`` into one categorical regression.

    When ``numerator`` is given, a second regression is fitted on
    (unit, t, j) rows for ``t`` in ``window.targets`` and ``j`` in the window
    of ``t``; its treatment lags stop at the window start and it may use V.
    """
    registry = registry or TimeFnRegistry.default()
    if not isinstance(spec, GFeatureSpec):
        spec = GFeatureSpec(tuple(spec))
    check_features(spec.terms, data.covariate_names, "g", registry)
    times = tuple(range(data.K + 1)) if times is None else tuple(int(j) for j in times)
    if not times or min(times) < 0 or max(times) > data.K:
        raise PanelError(f"treatment times must lie in 0..{data.K}")
    hist = History.from_panel(data)
    X = np.vstack(
        [feature_matrix(spec.terms, hist, j, data.covariate_names, registry) for j in times]
    )
    y = np.concatenate([data.treatments[:, j] for j in times])
    den = _fit_categorical(X, y, data.levels, controls, "treatment model")
    model = TreatmentModel(spec, den, data.levels, data.covariate_names, registry, times)
    if numerator is not None:
        model.numerator = fit_numerator(data, numerator, window, vspec or VSpec(), registry, controls)
    return model


def fit_numerator(
    data: PanelDataset,
    spec: GFeatureSpec | Sequence[str],
    window: WindowSpec,
    vspec: VSpec,
    registry: TimeFnRegistry,
    controls: glm.GlmControls | None = None,
) -> _NumeratorFit:
    if window is None:
        raise PanelError("a stabilisation numerator needs the window specification")
    if not isinstance(spec, GFeatureSpec):
        spec = GFeatureSpec(tuple(spec))
    check_features(spec.terms, data.covariate_names, "numerator", registry)
    for term in spec.terms:
        for atom in term.factors:
            if atom.kind == "v" and atom.lag >= len(vspec):
                raise PanelError(f"numerator atom {atom} outside V of length {len(vspec)}")
    hist = History.from_panel(data)
    Xs, ys = [], []
    for t in window.targets:
        start = window.start(t)
        v = v_matrix(data, vspec, t, window.s)
        for j in range(start, t + 1):
            Xs.append(feature_matrix(spec.terms, hist, j, data.covariate_names, registry, v=v, a_floor=start))
            ys.append(data.treatments[:, j])
    fit = _fit_categorical(np.vstack(Xs), np.concatenate(ys), data.levels, controls, "numerator model")
    return _NumeratorFit(spec, fit, window.s, vspec)


def observed_step_probs(model: TreatmentModel, data: PanelDataset) -> tuple[np.ndarray, int]:
    """Clamped denominator probabilities of the observed A(j): (n, K+1), and the clamp count."""
    hist = History.from_panel(data)
    out = np.empty((data.n, data.K + 1))
    rows = np.arange(data.n)
    for j in range(data.K + 1):
        out[:, j] = model.step_probs(hist, j)[rows, data.treatments[:, j]]
    clamped = int(((out < PROB_FLOOR) | (out > 1 - PROB_FLOOR)).sum())
    return np.clip(out, PROB_FLOOR, 1 - PROB_FLOOR), clamped


def observed_numerator_probs(
    model: TreatmentModel, data: PanelDataset, t: int
) -> tuple[np.ndarray, int]:
    """Clamped numerator probabilities of the observed window at ``t``: (n, s)."""
    num = model._require_numerator()
    hist = History.from_panel(data)
    start = t - num.s + 1
    v = v_matrix(data, num.vspec, t, num.s)
    rows = np.arange(data.n)
    out = np.column_stack(
        [model.numerator_step_probs(hist, j, t, v)[rows, data.treatments[:, j]] for j in range(start, t + 1)]
    )
    clamped = int(((out < PROB_FLOOR) | (out > 1 - PROB_FLOOR)).sum())
    return np.clip(out, PROB_FLOOR, 1 - PROB_FLOOR), clamped


def _window_product(step: np.ndarray, start: int, t: int) -> np.ndarray:
    out = np.ones(step.shape[0])
    for j in range(start, t + 1):
        out = out * step[:, j]
    return out


def window_probability(
    model: TreatmentModel, unit, t: int, s: int, which: str = "denominator"
) -> float:
    """Product over the window of the fitted probability of the unit's observed treatments."""
    if not s - 1 <= t <= unit.K:
        raise PanelError(f"t={t} is outside {s - 1}..{unit.K}")
    data = PanelDataset.from_units([unit])
    if which == "denominator":
        step, _ = observed_step_probs(model, data)
        return float(_window_product(step, t - s + 1, t)[0])
    if which == "numerator":
        if model.numerator is None or model.numerator.s != s:
            raise PanelError("numerator was fitted for a different window size")
        probs, _ = observed_numerator_probs(model, data, t)
        return float(np.prod(probs[0]))
    raise PanelError("which must be 'denominator' or 'numerator'")


@dataclass(frozen=True)
class Truncation:
    """Cap weights at a fixed ``bound`` or at the sample ``quantile`` of all weights."""

    bound: float | None = None
    quantile: float | None = None

    def __post_init__(self):
        if (self.bound is None) == (self.quantile is None):
            raise PanelError("truncation needs exactly one of bound or quantile")
        if self.bound is not None and not self.bound > 0:
            raise PanelError("truncation bound must be positive")
        if self.quantile is not None and not 0 < self.quantile < 1:
            raise PanelError("truncation quantile must be in (0, 1)")

    @classmethod
    def parse(cls, value) -> "Truncation | None":
        if value is None or isinstance(value, Truncation):
            return value
        if isinstance(value, dict):
            return cls(**value)
        raise PanelError(f"cannot interpret truncation {value!r}")


@dataclass
class WeightReport:
    """Per-(unit, t) weights, ``weights[i, k]`` for unit ``i`` and ``times[k]``."""

    unit_ids: np.ndarray
    times: tuple[int, ...]
    weights: np.ndarray
    style: str
    s: int
    denominators: np.ndarray
    numerators: np.ndarray | None = None
    clamped: int = 0
    truncation_applied: bool = False
    truncation_bound: float | None = None
    n_truncated: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.weights).all() and (self.weights > 0).all()):
            raise PanelError("weights must be positive and finite")

    @property
    def flat(self) -> np.ndarray:
        return self.weights.ravel()

    def column(self, t: int) -> np.ndarray:
        return self.weights[:, self.times.index(t)]

    def summary(self) -> dict:
        w = self.flat
        q = np.quantile(w, [0.01, 0.25, 0.5, 0.75, 0.99])
        return {
            "style": self.style,
            "s": self.s,
            "count": int(w.size),
            "min": float(w.min()),
            "max": float(w.max()),
            "mean": float(w.mean()),
            "variance": float(w.var()),
            "q01": float(q[0]),
            "q25": float(q[1]),
            "median": float(q[2]),
            "q75": float(q[3]),
            "q99": float(q[4]),
            "clamped_probabilities": self.clamped,
            "truncation_applied": self.truncation_applied,
            "truncation_bound": self.truncation_bound,
            "n_truncated": self.n_truncated,
            "effective_sample_size": effective_sample_size(w),
        }

    def to_csv(self, path, threshold: float | None = None) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit", "t", "weight", "flagged"])
            for i, uid in enumerate(self.unit_ids):
                for k, t in enumerate(self.times):
                    w = self.weights[i, k]
                    flagged = threshold is not None and w > threshold
                    writer.writerow([uid, t, repr(float(w)), int(flagged)])


def compute_weights(
    model: TreatmentModel,
    data: PanelDataset,
    window: WindowSpec,
    style: str = "unstabilized",
    truncation: Truncation | dict | None = None,
) -> WeightReport:
    """IPT weights ``1/den`` or ``num/den`` for every unit and ``t`` in the target set."""
    if style not in ("unstabilized", "stabilized"):
        raise PanelError("style must be 'unstabilized' or 'stabilized'")
    window.validate(data.K)
    step, clamped = observed_step_probs(model, data)
    times = window.targets
    den = np.column_stack([_window_product(step, window.start(t), t) for t in times])
    num = None
    if style == "stabilized":
        if model.numerator is None:
            raise PanelError("stabilized weights need a fitted numerator")
        if model.numerator.s != window.s:
            raise PanelError("numerator was fitted for a different window size")
        cols = []
        for t in times:
            probs, c = observed_numerator_probs(model, data, t)
            clamped += c
            cols.append(_window_product(probs, 0, probs.shape[1] - 1))
        num = np.column_stack(cols)
        w = num / den
    else:
        w = 1.0 / den
    trunc = Truncation.parse(truncation)
    applied, bound, n_trunc = False, None, 0
    if trunc is not None:
        bound = trunc.bound if trunc.bound is not None else float(np.quantile(w, trunc.quantile))
        n_trunc = int((w > bound).sum())
        w = np.minimum(w, bound)
        applied = True
    return WeightReport(
        unit_ids=np.asarray(data.ids),
        times=tuple(times),
        weights=w,
        style=style,
        s=window.s,
        denominators=den,
        numerators=num,
        clamped=clamped,
        truncation_applied=applied,
        truncation_bound=bound,
        n_truncated=n_trunc,
    )


def effective_sample_size(w) -> float:
    """``n (mean w)^2 / mean(w^2)``."""
    w = np.asarray(w, dtype=float).ravel()
    return float(w.size * w.mean() ** 2 / np.mean(w**2))


@dataclass
class EtaDiagnostic:
    threshold: float
    flagged: list[tuple[object, int, float]] = field(default_factory=list)
    mass_fraction: float = 0.0
    effective_sample_size: float = 0.0
    n: int = 0
    max_weight: float = 0.0

    @property
    def n_flagged(self) -> int:
        return len(self.flagged)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "n_flagged": self.n_flagged,
            "flagged": [{"unit": str(u), "t": t, "weight": w} for u, t, w in self.flagged],
            "mass_fraction": self.mass_fraction,
            "effective_sample_size": self.effective_sample_size,
            "n": self.n,
            "max_weight": self.max_weight,
        }


def eta_diagnostic(report: WeightReport, threshold: float) -> EtaDiagnostic:
    """Weights above ``threshold``, their share of the total mass, and the effective sample size."""
    w = report.weights
    idx = np.argwhere(w > threshold)
    flagged = [(report.unit_ids[i], report.times[k], float(w[i, k])) for i, k in idx]
    return EtaDiagnostic(
        threshold=float(threshold),
        flagged=flagged,
        mass_fraction=float(w[w > threshold].sum() / w.sum()),
        effective_sample_size=effective_sample_size(w),
        n=int(w.size),
        max_weight=float(w.max()),
    )
