"""Fitted covariate and outcome transition laws (the Q factor of the likelihood)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import glm
from ..data import PanelDataset, PanelError
from ..design import TimeFnRegistry
from ..engine import Law, SequentialModel
from ..features import History, check_features, feature_matrix, parse_features

__all__ = ["QChannel", "QSpec", "QModel", "fit_q", "OUTCOME_FAMILY"]

OUTCOME_FAMILY = {"continuous": "gaussian", "binary": "bernoulli", "counts": "binomial"}
_GLM_FAMILY = {"gaussian": "gaussian_identity", "bernoulli": "bernoulli_logit", "binomial": "binomial_logit"}
OUTCOME_CHANNEL = "outcome"


@dataclass(frozen=True)
class QChannel:
    """One variable's law: ``family`` in {auto, gaussian, bernoulli, binomial, static, constant}."""

    name: str
    family: str = "auto"
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", parse_features(self.terms))
        if self.family not in ("auto", "gaussian", "bernoulli", "binomial", "static", "constant"):
            raise PanelError(f"Q channel {self.name}: unknown family {self.family!r}")


@dataclass(frozen=True)
class QSpec:
    """Channels for every time-varying covariate and for the outcome.

    The outcome channel is named ``outcome`` (or by the dataset's outcome
    column name).  Covariates are simulated in the dataset's declared order.
    """

    channels: tuple[QChannel, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))

    @classmethod
    def from_dict(cls, channels: Sequence[dict]) -> "QSpec":
        return cls(tuple(QChannel(c["name"], c.get("family", "auto"), tuple(c.get("terms", ()))) for c in channels))

    def resolve(self, data: PanelDataset, registry: TimeFnRegistry) -> tuple[list[QChannel], QChannel]:
        by_name: dict[str, QChannel] = {}
        for ch in self.channels:
            if ch.name in by_name:
                raise PanelError(f"Q channel {ch.name!r} declared twice")
            by_name[ch.name] = ch
        out_names = {OUTCOME_CHANNEL, data.outcome_name}
        outcome = [by_name.pop(n) for n in list(by_name) if n in out_names]
        if len(outcome) != 1:
            raise PanelError("Q spec needs exactly one outcome channel")
        unknown = set(by_name) - set(data.covariate_names)
        if unknown:
            raise PanelError(f"Q channels reference unknown covariates {sorted(unknown)}")
        missing = [c for c in data.covariate_names if c not in by_name]
        if missing:
            raise PanelError(f"Q spec has no channel for covariates {missing}")
        covs = [by_name[c] for c in data.covariate_names]
        for pos, ch in enumerate(covs):
            check_features(ch.terms, data.covariate_names, "q", registry, position=pos)
        check_features(outcome[0].terms, data.covariate_names, "q", registry, position=None)
        want = OUTCOME_FAMILY[data.outcome_kind]
        if outcome[0].family not in ("auto", want, "constant"):
            raise PanelError(
                f"outcome family {outcome[0].family!r} does not match {data.outcome_kind} outcomes"
            )
        return covs, outcome[0]


@dataclass
class QModel:
    """Fitted transition laws plus the empirical baseline distribution of L(0)."""

    covariate_laws: tuple[Law, ...]
    outcome_law: Law
    fits: dict[str, glm.GlmFit | None]
    degenerate: dict[str, str]
    baseline: np.ndarray
    covariate_names: tuple[str, ...]
    levels: object
    outcome_kind: str
    registry: TimeFnRegistry
    K: int
    messages: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return all(f is None or f.converged for f in self.fits.values())

    def sequential(self, treatment_law: Law | None = None) -> SequentialModel:
        """The fitted Q (and optionally a treatment law) as a simulation model."""
        return SequentialModel(
            K=self.K,
            levels=self.levels,
            covariate_names=self.covariate_names,
            covariate_laws=self.covariate_laws,
            treatment_law=treatment_law,
            outcome_law=self.outcome_law,
            outcome_kind=self.outcome_kind,
            registry=self.registry,
        )


def _stack(terms, hist, K, names, registry):
    return np.vstack([feature_matrix(terms, hist, j, names, registry) for j in range(1, K + 2)])


def _fit_channel(family, terms, X, y, context, controls):
    if not terms:
        raise PanelError(f"{context}: fitted channels need feature terms")
    try:
        fit = glm.fit(glm.GlmProblem(X, y, _GLM_FAMILY[family]), controls)
    except glm.GlmError as exc:
        raise glm.GlmError(f"{context}: {exc}") from exc
    return fit


def fit_q(
    data: PanelDataset,
    qspec: QSpec,
    registry: TimeFnRegistry | None = None,
    controls: glm.GlmControls | None = None,
) -> QModel:
    """Pooled-over-time regressions of each L(j), j = 1..K+1, and of Y(j) on their past."""
    registry = registry or TimeFnRegistry.default()
    covs, out_ch = qspec.resolve(data, registry)
    hist = History.from_panel(data)
    K = data.K
    laws, fits, degenerate, messages = [], {}, {}, []
    for c, ch in enumerate(covs):
        values = data.covariates[:, :, c]
        family = ch.family
        if family == "auto":
            if np.all(values == values.flat[0]):
                family = "constant"
            elif np.all(values[:, 1:] == values[:, :-1]):
                family = "static"
            elif np.isin(values, (0.0, 1.0)).all():
                family = "bernoulli"
            else:
                family = "gaussian"
        if family == "binomial":
            raise PanelError(f"covariate {ch.name}: binomial laws are reserved for the outcome")
        if family == "constant":
            if not np.all(values[:, 1:] == values[0, 1]):
                raise PanelError(f"covariate {ch.name} declared constant but varies")
            laws.append(Law("constant", value=float(values[0, 1])))
            fits[ch.name] = None
            degenerate[ch.name] = "constant"
            messages.append(f"covariate {ch.name} is constant; fitted as a point mass")
            continue
        if family == "static":
            if not np.all(values[:, 1:] == values[:, :-1]):
                raise PanelError(f"covariate {ch.name} declared static but changes over time")
            laws.append(Law("static"))
            fits[ch.name] = None
            degenerate[ch.name] = "static"
            continue
        X = _stack(ch.terms, hist, K, data.covariate_names, registry)
        y = values[:, 1:].T.ravel()
        fit = _fit_channel(family, ch.terms, X, y, f"Q model for {ch.name}", controls)
        sd = float(np.sqrt(fit.dispersion)) if family == "gaussian" else 1.0
        laws.append(Law(family, ch.terms, np.asarray(fit.beta), sd=sd))
        fits[ch.name] = fit
        messages.extend(f"{ch.name}: {m}" for m in fit.messages)

    y_all = data.outcome[:, 1:]
    family = OUTCOME_FAMILY[data.outcome_kind] if out_ch.family == "auto" else out_ch.family
    if family == "constant" or (out_ch.family == "auto" and np.all(y_all == y_all.flat[0])
                                and data.outcome_kind != "counts"):
        out_law = Law("constant", value=float(y_all.flat[0]))
        fits[OUTCOME_CHANNEL] = None
        degenerate[OUTCOME_CHANNEL] = "constant"
    else:
        X = _stack(out_ch.terms, hist, K, data.covariate_names, registry)
        if family == "binomial":
            y = np.column_stack([y_all.T.ravel(), data.trials[:, 1:].T.ravel()])
        else:
            y = y_all.T.ravel()
        fit = _fit_channel(family, out_ch.terms, X, y, "Q model for the outcome", controls)
        sd = float(np.sqrt(fit.dispersion)) if family == "gaussian" else 1.0
        out_law = Law(family, out_ch.terms, np.asarray(fit.beta), sd=sd)
        fits[OUTCOME_CHANNEL] = fit
        messages.extend(f"outcome: {m}" for m in fit.messages)
    return QModel(
        covariate_laws=tuple(laws),
        outcome_law=out_law,
        fits=fits,
        degenerate=degenerate,
        baseline=np.array(data.covariates[:, 0, :]),
        covariate_names=data.covariate_names,
        levels=data.levels,
        outcome_kind=data.outcome_kind,
        registry=registry,
        K=K,
        messages=messages,
    )
