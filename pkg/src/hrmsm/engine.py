"""Sequential structural model: draws L(0), A(0), L(1), ..., A(K), L(K+1) forward in time.

The same engine runs the true data-generating process and the fitted
nuisance models (Q from :func:`hrmsm.estimators.fit_q`, g from
:func:`hrmsm.treatment.fit_g`).  Randomness comes from a noise source
indexed by (time, channel) so that re-running a unit with intervened
treatments on the same noise gives its counterfactual trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit, softmax

from .data import PanelError, TreatmentLevels
from .design import TimeFnRegistry
from .features import FeatureTerm, History, feature_matrix, parse_features

__all__ = [
    "Law",
    "BaselineLaw",
    "SequentialModel",
    "RngNoise",
    "NoiseBank",
    "TiledNoise",
]

LAW_FAMILIES = ("gaussian", "bernoulli", "binomial", "categorical", "static", "constant", "poisson")


@dataclass
class Law:
    """Conditional law of one variable given the past, in GLM form.

    ``coef`` is (p,) for scalar families and (p, levels-1) for
    ``categorical`` (baseline-category logits).  ``binomial`` outcome laws
    carry a ``trials`` law (``poisson`` family: ``offset + Poisson(exp(eta))``)
    when they must generate N(t).
    """

    family: str
    terms: tuple[FeatureTerm, ...] = ()
    coef: np.ndarray | None = None
    sd: float = 1.0
    value: float = 0.0
    trials: "Law | None" = None
    offset: float = 0.0

    def __post_init__(self):
        if self.family not in LAW_FAMILIES:
            raise PanelError(f"unknown law family {self.family!r}")
        self.terms = parse_features(self.terms)
        if self.family in ("gaussian", "bernoulli", "binomial", "categorical", "poisson"):
            if self.coef is None:
                raise PanelError(f"{self.family} law needs coefficients")
            self.coef = np.asarray(self.coef, dtype=float)
            if self.coef.shape[0] != len(self.terms):
                raise PanelError("one coefficient (row) per feature term is required")


@dataclass(frozen=True)
class BaselineLaw:
    dist: str  # normal | bernoulli | uniform | constant
    params: tuple = ()

    def draw(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.dist == "normal":
            mean, sd = self.params
            return mean + sd * z
        if self.dist == "bernoulli":
            (p,) = self.params
            return (u < p).astype(float)
        if self.dist == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * u
        if self.dist == "constant":
            (value,) = self.params
            return np.full(z.shape, float(value))
        raise PanelError(f"unknown baseline distribution {self.dist!r}")

    def log_density(self, x: np.ndarray) -> np.ndarray:
        if self.dist == "normal":
            mean, sd = self.params
            return stats.norm.logpdf(x, mean, sd)
        if self.dist == "bernoulli":
            (p,) = self.params
            return np.where(x == 1, np.log(p), np.log1p(-p))
        if self.dist == "uniform":
            lo, hi = self.params
            return np.where((x >= lo) & (x <= hi), -np.log(hi - lo), -np.inf)
        (value,) = self.params
        return np.where(x == value, 0.0, -np.inf)


class RngNoise:
    """Fresh noise from a generator, drawn on demand."""

    def __init__(self, rng: np.random.Generator, N: int):
        self.rng, self.N = rng, N

    def normal(self, j: int, channel: int) -> np.ndarray:
        return self.rng.standard_normal(self.N)

    def uniform(self, j: int, channel: int) -> np.ndarray:
        return self.rng.random(self.N)


class NoiseBank:
    """Pre-drawn noise per (unit, time, channel): common random numbers across regimens."""

    def __init__(self, z: np.ndarray, u: np.ndarray):
        self.z, self.u = z, u

    @classmethod
    def draw(cls, rng: np.random.Generator, N: int, T: int, C: int) -> "NoiseBank":
        return cls(rng.standard_normal((N, T, C)), rng.random((N, T, C)))

    @property
    def N(self) -> int:
        return self.z.shape[0]

    def normal(self, j: int, channel: int) -> np.ndarray:
        return self.z[:, j, channel]

    def uniform(self, j: int, channel: int) -> np.ndarray:
        return self.u[:, j, channel]

    def take(self, idx) -> "NoiseBank":
        return NoiseBank(self.z[idx], self.u[idx])

    def tile(self, reps: int) -> "TiledNoise":
        """The bank repeated ``reps`` times along the unit axis (block-major), tiled on read."""
        return TiledNoise(self, reps)


class TiledNoise:
    """Row ``b * N + i`` reads the noise of row ``i``: shared noise across branches."""

    def __init__(self, bank, reps: int):
        self.bank, self.reps = bank, reps

    @property
    def N(self) -> int:
        return self.bank.N * self.reps

    def normal(self, j: int, channel: int) -> np.ndarray:
        return np.tile(self.bank.normal(j, channel), self.reps)

    def uniform(self, j: int, channel: int) -> np.ndarray:
        return np.tile(self.bank.uniform(j, channel), self.reps)

    def tile(self, reps: int) -> "TiledNoise":
        return TiledNoise(self.bank, self.reps * reps)


def _categorical_draw(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)[:, :-1]
    return (u[:, None] > cum).sum(axis=1).astype(np.int64)


@dataclass
class SequentialModel:
    """Laws for covariates (in declared order), treatment and outcome over times 0..K+1.

    ``outcome_law`` may be ``None`` for models that only need covariate
    dynamics; ``baseline`` may be ``None`` when L(0) is supplied externally
    (for example from an empirical distribution).
    """

    K: int
    levels: TreatmentLevels
    covariate_names: tuple[str, ...]
    covariate_laws: tuple[Law, ...]
    treatment_law: Law | None
    outcome_law: Law | None
    outcome_kind: str = "continuous"
    registry: TimeFnRegistry = field(default_factory=TimeFnRegistry.default)
    baseline: tuple[BaselineLaw, ...] | None = None

    def __post_init__(self):
        self.covariate_names = tuple(self.covariate_names)
        self.covariate_laws = tuple(self.covariate_laws)
        if len(self.covariate_laws) != len(self.covariate_names):
            raise PanelError("one law per covariate is required")

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    @property
    def n_channels(self) -> int:
        return self.p + 3

    @property
    def ch_outcome(self) -> int:
        return self.p

    @property
    def ch_trials(self) -> int:
        return self.p + 1

    @property
    def ch_treatment(self) -> int:
        return self.p + 2

    def new_history(self, N: int) -> History:
        return History.empty(N, self.K, self.p, self.levels.scores, self.outcome_kind == "counts")

    def _X(self, law: Law, hist: History, j: int) -> np.ndarray:
        return feature_matrix(law.terms, hist, j, self.covariate_names, self.registry)

    # -- baseline -----------------------------------------------------------
    def draw_baseline(self, hist: History, noise) -> None:
        if self.baseline is None:
            raise PanelError("model has no parametric baseline law")
        for c, law in enumerate(self.baseline):
            hist.L[:, 0, c] = law.draw(noise.normal(0, c), noise.uniform(0, c))

    # -- treatment ----------------------------------------------------------
    def treatment_probs(self, hist: History, j: int) -> np.ndarray:
        """(N, levels) probabilities of A(j) given the past under the treatment law."""
        law = self.treatment_law
        eta = self._X(law, hist, j) @ law.coef
        if law.family == "bernoulli":
            p1 = expit(eta)
            return np.column_stack([1 - p1, p1])
        if law.family == "categorical":
            return softmax(np.column_stack([np.zeros(hist.N), eta]), axis=1)
        raise PanelError(f"treatment law family {law.family!r} is not categorical")

    def draw_treatment(self, hist: History, j: int, noise, forced: np.ndarray | None = None) -> None:
        if forced is not None and (forced >= 0).all():
            hist.A[:, j] = forced
            return
        u = noise.uniform(j, self.ch_treatment)
        codes = _categorical_draw(self.treatment_probs(hist, j), u)
        if forced is not None:
            codes = np.where(forced >= 0, forced, codes)
        hist.A[:, j] = codes

    # -- covariates and outcome ---------------------------------------------
    def covariate_mean(self, hist: History, j: int, c: int) -> np.ndarray:
        law = self.covariate_laws[c]
        if law.family == "static":
            return hist.L[:, j - 1, c]
        if law.family == "constant":
            return np.full(hist.N, law.value)
        eta = self._X(law, hist, j) @ law.coef
        return eta if law.family == "gaussian" else expit(eta)

    def draw_covariates(self, hist: History, j: int, noise) -> None:
        for c, law in enumerate(self.covariate_laws):
            mean = self.covariate_mean(hist, j, c)
            if law.family == "gaussian":
                hist.L[:, j, c] = mean + law.sd * noise.normal(j, c)
            elif law.family == "bernoulli":
                hist.L[:, j, c] = (noise.uniform(j, c) < mean).astype(float)
            else:
                hist.L[:, j, c] = mean

    def outcome_mean(self, hist: History, j: int) -> np.ndarray:
        """E[Y(j) | past]; the success probability for counts outcomes."""
        law = self.outcome_law
        if law.family == "constant":
            return np.full(hist.N, law.value)
        eta = self._X(law, hist, j) @ law.coef
        return eta if law.family == "gaussian" else expit(eta)

    def draw_outcome(self, hist: History, j: int, noise) -> None:
        law = self.outcome_law
        mean = self.outcome_mean(hist, j)
        u = noise.uniform(j, self.ch_outcome)
        if law.family == "gaussian":
            hist.Y[:, j] = mean + law.sd * noise.normal(j, self.ch_outcome)
        elif law.family == "bernoulli":
            hist.Y[:, j] = (u < mean).astype(float)
        elif law.family == "binomial":
            tl = law.trials
            if tl is None:
                raise PanelError("binomial outcome law has no trials law; cannot draw counts")
            lam = np.exp(self._X(tl, hist, j) @ tl.coef)
            n_tr = tl.offset + stats.poisson.ppf(noise.uniform(j, self.ch_trials), lam)
            hist.trials[:, j] = n_tr
            hist.Y[:, j] = stats.binom.ppf(u, n_tr, mean)
        else:
            hist.Y[:, j] = mean

    # -- trajectories -------------------------------------------------------
    def forward(
        self,
        hist: History,
        start: int,
        stop: int,
        noise,
        forced: np.ndarray | None = None,
        outcomes: bool = True,
        last: str = "draw",
    ) -> np.ndarray | None:
        """Advance from known ``L(0..start)``, ``A(0..start-1)`` to ``L(stop)``.

        For ``j = start .. stop-1``: assign A(j) (``forced[:, j]`` where
        non-negative, otherwise drawn from the treatment law), then draw
        L(j+1).  Outcomes are drawn at every step when ``outcomes``;
        ``last='mean'`` returns E[Y(stop) | past] instead of a draw,
        ``last='draw'`` returns the drawn Y(stop).
        """
        for j in range(start, stop):
            self.draw_treatment(hist, j, noise, None if forced is None else forced[:, j])
            self.draw_covariates(hist, j + 1, noise)
            if j + 1 < stop and outcomes:
                self.draw_outcome(hist, j + 1, noise)
        if last == "mean":
            return self.outcome_mean(hist, stop)
        if last == "draw":
            self.draw_outcome(hist, stop, noise)
            return hist.Y[:, stop]
        return None

    # -- densities (used by the t-specific identity checks) -------------------
    def covariate_log_density(self, hist: History, j: int, c: int, value: np.ndarray) -> np.ndarray:
        law = self.covariate_laws[c]
        mean = self.covariate_mean(hist, j, c)
        if law.family == "gaussian":
            return stats.norm.logpdf(value, mean, law.sd)
        if law.family == "bernoulli":
            return np.where(value == 1, np.log(mean), np.log1p(-mean))
        return np.where(value == mean, 0.0, -np.inf)

    def outcome_log_density(self, hist: History, j: int, value, trials=None) -> np.ndarray:
        law = self.outcome_law
        mean = self.outcome_mean(hist, j)
        if law.family == "gaussian":
            return stats.norm.logpdf(value, mean, law.sd)
        if law.family == "bernoulli":
            return np.where(value == 1, np.log(mean), np.log1p(-mean))
        if law.family == "binomial":
            out = stats.binom.logpmf(value, trials, mean)
            tl = law.trials
            if tl is not None:
                lam = np.exp(self._X(tl, hist, j) @ tl.coef)
                out = out + stats.poisson.logpmf(trials - tl.offset, lam)
            return out
        return np.where(value == mean, 0.0, -np.inf)

    def treatment_prob_observed(self, hist: History, j: int) -> np.ndarray:
        probs = self.treatment_probs(hist, j)
        return probs[np.arange(hist.N), hist.A[:, j]]

