"""Shared estimator types: regimen grids, estimate reports and MSM design helpers."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data import PanelDataset, PanelError, TreatmentLevels, v_matrix
from ..design import MsmSpec, design_matrix

__all__ = ["RegimenGrid", "EstimateReport", "GRID_LIMIT", "observed_design", "msm_response"]

GRID_LIMIT = 256


@dataclass(frozen=True)
class RegimenGrid:
    """Window regimens to intervene on, as treatment codes of shape (R, s), oldest first."""

    levels: TreatmentLevels
    regimens: np.ndarray

    def __post_init__(self):
        reg = np.asarray(self.regimens, dtype=np.int64)
        if reg.ndim != 2 or reg.shape[0] == 0:
            raise PanelError("regimen grid must be a nonempty (R, s) array")
        if ((reg < 0) | (reg >= len(self.levels))).any():
            raise PanelError("regimen grid holds codes outside the treatment levels")
        reg.setflags(write=False)
        object.__setattr__(self, "regimens", reg)

    @classmethod
    def full(cls, levels: TreatmentLevels, s: int, limit: int = GRID_LIMIT) -> "RegimenGrid":
        """Every sequence of ``s`` levels (requires ``|levels|**s <= limit``)."""
        size = len(levels) ** s
        if size > limit:
            raise PanelError(
                f"full grid has {size} regimens (> {limit}); supply an explicit regimen list"
            )
        regs = list(itertools.product(range(len(levels)), repeat=s))
        return cls(levels, np.array(regs, dtype=np.int64).reshape(size, s))

    @classmethod
    def from_labels(cls, levels: TreatmentLevels, regimens: Sequence[Sequence]) -> "RegimenGrid":
        return cls(levels, np.array([[levels.code(a) for a in r] for r in regimens], dtype=np.int64))

    @property
    def s(self) -> int:
        return self.regimens.shape[1]

    def __len__(self) -> int:
        return self.regimens.shape[0]

    def scores(self) -> np.ndarray:
        return self.levels.scores[self.regimens]

    def labels(self) -> list[list[str]]:
        return [[self.levels.labels[c] for c in r] for r in self.regimens]


def observed_design(data: PanelDataset, spec: MsmSpec, t: int) -> np.ndarray:
    """MSM design rows at each unit's observed window for outcome time ``t``."""
    s = spec.window.s
    scores = data.treatment_scores[:, t - s + 1 : t + 1]
    return design_matrix(spec, t, scores, v_matrix(data, spec.vspec, t, s))


def msm_response(data: PanelDataset, spec: MsmSpec, t: int) -> np.ndarray:
    """Y(t+1) in the form the MSM family expects: (C, N) pairs for counts."""
    if spec.link == "logit_binomial":
        return data.outcome_at(t + 1)
    return data.outcome[:, t + 1]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


@dataclass
class EstimateReport:
    """Point estimate of the MSM coefficients with the run's provenance.

    ``beta`` is (p,) in pooled mode and (len(times), p) in stratified mode,
    row ``k`` holding beta_t for ``t = times[k]``.
    """

    estimator: str
    mode: str
    link: str
    term_names: list[str]
    beta: np.ndarray
    times: tuple[int, ...]
    s: int
    n_units: int
    weights: dict | None = None
    monte_carlo_draws: int | None = None
    seed: int | None = None
    converged: bool = True
    messages: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        p = len(self.term_names)
        want = (p,) if self.mode == "pooled" else (len(self.times), p)
        if self.beta.shape != want:
            raise PanelError(f"beta has shape {self.beta.shape}, expected {want}")
        if not np.isfinite(self.beta).all():
            raise PanelError(f"{self.estimator} produced non-finite coefficients")

    def beta_for(self, t: int | None = None) -> np.ndarray:
        if self.mode == "pooled":
            return self.beta
        if t is None:
            raise PanelError("stratified reports need a time t")
        return self.beta[self.times.index(t)]

    def flat_beta(self) -> np.ndarray:
        return self.beta.ravel()

    def flat_names(self) -> list[str]:
        if self.mode == "pooled":
            return list(self.term_names)
        return [f"{name}@t={t}" for t in self.times for name in self.term_names]

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "estimator": self.estimator,
                "mode": self.mode,
                "link": self.link,
                "term_names": self.term_names,
                "beta": self.beta,
                "times": list(self.times),
                "s": self.s,
                "n_units": self.n_units,
                "weights": self.weights,
                "monte_carlo_draws": self.monte_carlo_draws,
                "seed": self.seed,
                "converged": self.converged,
                "messages": self.messages,
                "extra": self.extra,
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateReport":
        d = dict(d)
        d["times"] = tuple(d["times"])
        d["beta"] = np.asarray(d["beta"], dtype=float)
        return cls(**d)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "EstimateReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_text(self) -> str:
        lines = [
            f"estimator: {self.estimator} ({self.mode}, link {self.link}, s={self.s})",
            f"units: {self.n_units}; targets: {self.times[0]}..{self.times[-1]} ({len(self.times)})",
        ]
        if self.monte_carlo_draws is not None:
            lines.append(f"monte carlo draws: {self.monte_carlo_draws}; seed: {self.seed}")
        width = max(len(n) for n in self.term_names)
        if self.mode == "pooled":
            for name, b in zip(self.term_names, self.beta):
                lines.append(f"  {name:<{width}}  {b: .6f}")
        else:
            lines.append("  t     " + "  ".join(f"{n:>12}" for n in self.term_names))
            for t, row in zip(self.times, self.beta):
                lines.append(f"  {t:<5} " + "  ".join(f"{b:12.6f}" for b in row))
        if self.weights:
            w = self.weights
            lines.append(
                f"weights: mean {w['mean']:.4f}, max {w['max']:.4f}, ESS {w['effective_sample_size']:.1f}"
            )
        if not self.converged:
            lines.append("WARNING: not all fits converged")
        lines.extend(f"note: {m}" for m in self.messages)
        return "\n".join(lines) + "\n"
