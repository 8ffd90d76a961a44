"""Term language and design matrices for the marginal structural model m(t, a, V | beta).

A term is a product of atoms.  Atom grammar (factors joined by ``*``)::

    const          intercept
    t              outcome-time index t
    a_lag:K        score of a(t-K), 0 <= K < s
    a_mean         mean score of the s window treatments
    v:I            I-th entry of V(t-s+1)
    fn:NAME        registered time function evaluated at t

Example: ``"a_mean*fn:year*fn:season"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .data import PanelError, TView, VSpec, WindowSpec, eval_v

__all__ = [
    "TERM_GRAMMAR_VERSION",
    "MODES",
    "LINKS",
    "Atom",
    "Term",
    "parse_term",
    "TimeFnRegistry",
    "year_fn",
    "season_fn",
    "MsmSpec",
    "design_matrix",
    "design_row",
    "mean_response",
    "inverse_link",
]

TERM_GRAMMAR_VERSION = 1
MODES = ("stratified", "pooled")
LINKS = ("identity", "logit_binary", "logit_binomial")


@dataclass(frozen=True)
class Atom:
    kind: str  # const | t | a_lag | a_mean | v | fn
    arg: object = None

    def __str__(self):
        if self.kind in ("const", "t", "a_mean"):
            return self.kind
        return f"{self.kind}:{self.arg}"

    @property
    def is_time(self) -> bool:
        return self.kind in ("t", "fn")

    @property
    def is_treatment(self) -> bool:
        return self.kind in ("a_lag", "a_mean")


def _parse_atom(text: str) -> Atom:
    text = text.strip()
    if text in ("const", "1"):
        return Atom("const")
    if text in ("t", "t_index"):
        return Atom("t")
    if text == "a_mean":
        return Atom("a_mean")
    head, _, arg = text.partition(":")
    if head == "a_lag" and arg.isdigit():
        return Atom("a_lag", int(arg))
    if head == "v" and arg.isdigit():
        return Atom("v", int(arg))
    if head == "fn" and arg:
        return Atom("fn", arg)
    raise PanelError(f"cannot parse MSM atom {text!r}")


@dataclass(frozen=True)
class Term:
    factors: tuple[Atom, ...]

    def __post_init__(self):
        if not self.factors:
            raise PanelError("a term needs at least one factor")
        object.__setattr__(self, "factors", tuple(self.factors))

    def __str__(self):
        return "*".join(str(f) for f in self.factors)

    @property
    def has_time(self) -> bool:
        return any(f.is_time for f in self.factors)

    @property
    def has_treatment(self) -> bool:
        return any(f.is_treatment for f in self.factors)


def parse_term(text: str | Term) -> Term:
    if isinstance(text, Term):
        return text
    return Term(tuple(_parse_atom(part) for part in str(text).split("*")))


def year_fn(origin: int = 0, per: int = 4) -> Callable:
    """Year number of period ``t+1``: ``floor((t+1-origin)/per)``."""

    def f(t):
        return np.floor((np.asarray(t, dtype=float) + 1 - origin) / per)

    return f


def season_fn(per: int = 4, split: int = 2) -> Callable:
    """Indicator that period ``t+1`` falls in the first ``split`` of ``per`` sub-periods."""

    def f(t):
        return (np.mod(np.asarray(t, dtype=float) + 1, per) < split).astype(float)

    return f


_BUILTINS = {"year": year_fn, "season": season_fn}


@dataclass
class TimeFnRegistry:
    """Named deterministic maps t -> real used by ``fn:`` atoms."""

    functions: dict[str, Callable] = field(default_factory=dict)
    config: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def default(cls) -> "TimeFnRegistry":
        return cls.from_config({"year": {"kind": "year"}, "season": {"kind": "season"}})

    @classmethod
    def from_config(cls, cfg: dict | None) -> "TimeFnRegistry":
        reg = cls()
        for name, params in (cfg or {}).items():
            params = dict(params or {})
            kind = params.pop("kind", name)
            if kind not in _BUILTINS:
                raise PanelError(f"unknown time function kind {kind!r}")
            reg.functions[name] = _BUILTINS[kind](**params)
            reg.config[name] = {"kind": kind, **params}
        return reg

    def __call__(self, name: str, t) -> np.ndarray:
        try:
            f = self.functions[name]
        except KeyError:
            raise PanelError(f"time function {name!r} is not registered") from None
        return f(t)

    def __contains__(self, name):
        return name in self.functions


@dataclass
class MsmSpec:
    """The marginal structural model: mode, link, terms, window and V."""

    mode: str
    link: str
    terms: tuple[Term, ...]
    window: WindowSpec
    vspec: VSpec = field(default_factory=VSpec)
    registry: TimeFnRegistry = field(default_factory=TimeFnRegistry.default)

    def __post_init__(self):
        self.terms = tuple(parse_term(t) for t in self.terms)
        if self.mode not in MODES:
            raise PanelError(f"mode must be one of {MODES}")
        if self.link not in LINKS:
            raise PanelError(f"link must be one of {LINKS}")
        if not self.terms:
            raise PanelError("MSM needs at least one term")
        for term in self.terms:
            for atom in term.factors:
                if atom.kind == "a_lag" and atom.arg >= self.window.s:
                    raise PanelError(f"a_lag:{atom.arg} needs window size > {atom.arg}")
                if atom.kind == "v" and atom.arg >= len(self.vspec):
                    raise PanelError(f"v:{atom.arg} outside V of length {len(self.vspec)}")
                if atom.kind == "fn" and atom.arg not in self.registry:
                    raise PanelError(f"time function {atom.arg!r} is not registered")
                if self.mode == "stratified" and atom.is_time:
                    raise PanelError("stratified models cannot contain time atoms")

    @property
    def term_names(self) -> list[str]:
        return [str(t) for t in self.terms]

    @property
    def p(self) -> int:
        return len(self.terms)

    def validate(self, data) -> "MsmSpec":
        """Cross-check against a dataset (K, covariates, outcome kind)."""
        self.window.validate(data.K)
        self.vspec.validate(data.covariate_names)
        expected = {"identity": None, "logit_binary": "binary", "logit_binomial": "counts"}[self.link]
        if expected and data.outcome_kind != expected:
            raise PanelError(f"link {self.link} requires a {expected} outcome")
        if self.link == "identity" and data.outcome_kind == "counts":
            raise PanelError("counts outcomes require the logit_binomial link")
        return self

    def glm_family(self) -> str:
        return {
            "identity": "gaussian_identity",
            "logit_binary": "bernoulli_logit",
            "logit_binomial": "binomial_logit",
        }[self.link]


def design_matrix(
    spec: MsmSpec,
    t,
    window_scores: np.ndarray,
    v: np.ndarray | None = None,
) -> np.ndarray:
    """Evaluate all terms for ``N`` rows.

    ``window_scores`` is (N, s) ordered oldest first, so column ``s-1`` is a(t).
    ``t`` is a scalar or (N,) array; ``v`` is (N, len(V)).
    """
    window_scores = np.atleast_2d(np.asarray(window_scores, dtype=float))
    N, s = window_scores.shape
    if s != spec.window.s:
        raise PanelError(f"window has {s} treatments, model expects {spec.window.s}")
    t = np.broadcast_to(np.asarray(t, dtype=float), (N,))
    if v is None:
        v = np.empty((N, 0))
    X = np.ones((N, spec.p))
    cache: dict[Atom, np.ndarray] = {}
    for col, term in enumerate(spec.terms):
        for atom in term.factors:
            if atom.kind == "const":
                continue
            if atom not in cache:
                if atom.kind == "t":
                    val = t
                elif atom.kind == "a_lag":
                    val = window_scores[:, s - 1 - atom.arg]
                elif atom.kind == "a_mean":
                    val = window_scores.mean(axis=1)
                elif atom.kind == "v":
                    val = v[:, atom.arg]
                else:
                    val = spec.registry(atom.arg, t)
                cache[atom] = val
            X[:, col] *= cache[atom]
    return X


def design_row(view: TView, spec: MsmSpec, regimen_override=None) -> np.ndarray:
    """One design row for a t-specific view, optionally at a hypothetical window regimen.

    ``regimen_override`` is a length-``s`` sequence of treatment labels.
    """
    if regimen_override is not None:
        if len(regimen_override) != spec.window.s:
            raise PanelError(f"regimen must have length {spec.window.s}")
        codes = [view.levels.code(a) for a in regimen_override]
        scores = view.levels.scores[codes]
    else:
        scores = view.window_scores
    v = eval_v(view, spec.vspec)[None, :]
    return design_matrix(spec, view.t, scores[None, :], v)[0]


def inverse_link(eta, link: str):
    if link == "identity":
        return eta
    return expit(eta)


def mean_response(row, beta, link: str) -> float:
    row = np.asarray(row, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if row.shape != beta.shape:
        raise PanelError("row and beta dimensions differ")
    with np.errstate(invalid="ignore"):
        eta = float(row @ beta)
    if link == "identity":
        return eta
    if math.isinf(eta):
        return 1.0 if eta > 0 else 0.0
    return float(expit(eta))

