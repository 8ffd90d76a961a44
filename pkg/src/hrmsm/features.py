"""Feature terms for the nuisance regressions g(A(j) | past) and f(L(j) | past).

Grammar (factors joined by ``*``), all evaluated at time ``j``::

    const          intercept
    j              the time index j
    a_prev:K       score of A(j-K), K >= 1
    a_mean:K       mean score of A(j-1), ..., A(j-K)
    l:NAME:K       covariate NAME at time j-K (K = 0 allowed where causally valid)
    fn:NAME[:LAG]  registered time function at j-LAG
    v:I            I-th entry of V (stabilisation numerators only)

Lags reaching before time 0 are padded: treatments with the reference
(first) level, covariates with their time-0 value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PanelError
from .design import TimeFnRegistry

__all__ = ["FeatureAtom", "FeatureTerm", "parse_feature", "parse_features", "History",
           "feature_matrix", "check_features"]


@dataclass(frozen=True)
class FeatureAtom:
    kind: str  # const | j | a_prev | a_mean | l | fn | v
    name: str | None = None
    lag: int = 0

    def __str__(self):
        if self.kind in ("const", "j"):
            return self.kind
        if self.kind in ("a_prev", "a_mean"):
            return f"{self.kind}:{self.lag}"
        if self.kind == "l":
            return f"l:{self.name}:{self.lag}"
        if self.kind == "fn":
            return f"fn:{self.name}" + (f":{self.lag}" if self.lag else "")
        return f"v:{self.lag}"


@dataclass(frozen=True)
class FeatureTerm:
    factors: tuple[FeatureAtom, ...]

    def __str__(self):
        return "*".join(str(f) for f in self.factors)


def _parse_atom(text: str) -> FeatureAtom:
    parts = text.strip().split(":")
    head = parts[0]
    try:
        if head in ("const", "1") and len(parts) == 1:
            return FeatureAtom("const")
        if head == "j" and len(parts) == 1:
            return FeatureAtom("j")
        if head in ("a_prev", "a_mean") and len(parts) == 2:
            lag = int(parts[1])
            if lag < 1:
                raise PanelError(f"{head} lag must be >= 1 in {text!r}")
            return FeatureAtom(head, lag=lag)
        if head == "l" and len(parts) == 3:
            lag = int(parts[2])
            if lag < 0:
                raise PanelError(f"negative lag in {text!r}")
            return FeatureAtom("l", name=parts[1], lag=lag)
        if head == "fn" and len(parts) in (2, 3):
            return FeatureAtom("fn", name=parts[1], lag=int(parts[2]) if len(parts) == 3 else 0)
        if head == "v" and len(parts) == 2:
            return FeatureAtom("v", lag=int(parts[1]))
    except ValueError:
        pass
    raise PanelError(f"cannot parse feature atom {text!r}")


def parse_feature(text: str | FeatureTerm) -> FeatureTerm:
    if isinstance(text, FeatureTerm):
        return text
    parts = [p for p in str(text).split("*") if p.strip()]
    if not parts:
        raise PanelError("empty feature term")
    return FeatureTerm(tuple(_parse_atom(p) for p in parts))


def parse_features(terms: Sequence) -> tuple[FeatureTerm, ...]:
    return tuple(parse_feature(t) for t in terms)


def check_features(
    terms: Sequence[FeatureTerm],
    covariate_names: Sequence[str],
    role: str,
    registry: TimeFnRegistry | None = None,
    position: int | None = None,
) -> None:
    """Validate terms for a role: ``g``, ``numerator``, or ``q`` (channel ``position``).

    Q channels may use same-time covariates (lag 0) only when they come
    earlier in the declared order; ``position=None`` marks the outcome
    channel, which may use every same-time covariate.
    """
    for term in terms:
        for atom in term.factors:
            if atom.kind == "l":
                if atom.name not in covariate_names:
                    raise PanelError(f"feature {term} references unknown covariate {atom.name!r}")
                if role == "numerator":
                    raise PanelError("stabilisation numerators cannot use covariate atoms")
                if role == "q" and atom.lag == 0 and position is not None:
                    if list(covariate_names).index(atom.name) >= position:
                        raise PanelError(
                            f"feature {term}: {atom.name} at lag 0 is not a predecessor"
                        )
            elif atom.kind == "v" and role != "numerator":
                raise PanelError("v atoms are only available in stabilisation numerators")
            elif atom.kind == "fn" and registry is not None and atom.name not in registry:
                raise PanelError(f"time function {atom.name!r} is not registered")


@dataclass
class History:
    """Mutable trajectory arrays shared by simulators and feature builders.

    ``A`` holds treatment codes (-1 where not yet assigned), ``L`` covariates
    (N, K+2, p), ``Y`` outcomes (N, K+2) and ``trials`` N(t) for counts.
    """

    A: np.ndarray
    L: np.ndarray
    Y: np.ndarray
    scores: np.ndarray
    trials: np.ndarray | None = None

    @classmethod
    def empty(cls, N: int, K: int, p: int, scores, counts: bool = False) -> "History":
        return cls(
            A=np.full((N, K + 1), -1, dtype=np.int64),
            L=np.full((N, K + 2, p), np.nan),
            Y=np.full((N, K + 2), np.nan),
            scores=np.asarray(scores, dtype=float),
            trials=np.full((N, K + 2), np.nan) if counts else None,
        )

    @classmethod
    def from_panel(cls, data) -> "History":
        return cls(
            A=np.array(data.treatments),
            L=np.array(data.covariates),
            Y=np.array(data.outcome),
            scores=data.levels.scores,
            trials=None if data.trials is None else np.array(data.trials),
        )

    @property
    def N(self) -> int:
        return self.A.shape[0]

    def take(self, idx) -> "History":
        return History(
            A=self.A[idx].copy(),
            L=self.L[idx].copy(),
            Y=self.Y[idx].copy(),
            scores=self.scores,
            trials=None if self.trials is None else self.trials[idx].copy(),
        )

    def tile(self, reps: int) -> "History":
        """Copy repeated ``reps`` times along the unit axis (block-major)."""

        def rep(x):
            return None if x is None else np.tile(x, (reps,) + (1,) * (x.ndim - 1))

        return History(rep(self.A), rep(self.L), rep(self.Y), self.scores, rep(self.trials))


def _a_score(hist: History, idx, floor) -> np.ndarray:
    """Scores of A(idx) with reference-level padding for idx < floor (floor may be an array)."""
    N = hist.N
    ref = hist.scores[0]
    idx_arr = np.broadcast_to(np.asarray(idx), (N,))
    floor_arr = np.broadcast_to(np.asarray(floor), (N,))
    ok = idx_arr >= floor_arr
    col = np.clip(idx_arr, 0, hist.A.shape[1] - 1)
    codes = hist.A[np.arange(N), col]
    out = np.where(ok, hist.scores[np.clip(codes, 0, None)], ref)
    return out


def feature_matrix(
    terms: Sequence[FeatureTerm],
    hist: History,
    j: int,
    covariate_names: Sequence[str],
    registry: TimeFnRegistry | None = None,
    v: np.ndarray | None = None,
    a_floor=0,
) -> np.ndarray:
    """Evaluate ``terms`` at time ``j`` for every row of ``hist``: shape (N, len(terms)).

    ``a_floor`` (scalar or per-row) is the first treatment index visible to
    ``a_prev``/``a_mean`` atoms; earlier lags read as the reference level.
    """
    N = hist.N
    X = np.ones((N, len(terms)))
    cache: dict[FeatureAtom, np.ndarray] = {}
    scalar_floor = np.ndim(a_floor) == 0
    for col, term in enumerate(terms):
        for atom in term.factors:
            if atom.kind == "const":
                continue
            if atom not in cache:
                if atom.kind == "j":
                    val = np.full(N, float(j))
                elif atom.kind == "a_prev":
                    i = j - atom.lag
                    if scalar_floor and i >= a_floor:
                        val = hist.scores[hist.A[:, i]]
                    else:
                        val = _a_score(hist, i, a_floor)
                elif atom.kind == "a_mean":
                    acc = np.zeros(N)
                    for k in range(1, atom.lag + 1):
                        i = j - k
                        if scalar_floor and i >= a_floor:
                            acc += hist.scores[hist.A[:, i]]
                        else:
                            acc += _a_score(hist, i, a_floor)
                    val = acc / atom.lag
                elif atom.kind == "l":
                    c = covariate_names.index(atom.name)
                    val = hist.L[:, max(j - atom.lag, 0), c]
                elif atom.kind == "fn":
                    if registry is None:
                        raise PanelError("time-function atoms need a registry")
                    val = np.full(N, float(registry(atom.name, j - atom.lag)))
                else:
                    if v is None:
                        raise PanelError("v atoms need V values")
                    val = v[:, atom.lag]
                cache[atom] = val
            X[:, col] *= cache[atom]
    return X
