"""Nonparametric bootstrap over units."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import glm
from .data import PanelDataset, PanelError
from .montecarlo import substream

__all__ = ["BootstrapError", "BootstrapResult", "bootstrap", "MAX_FAILURE_RATE"]

MAX_FAILURE_RATE = 0.2
_FAILURES = (glm.GlmError, PanelError, ArithmeticError, np.linalg.LinAlgError)


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed for the intervals to be trusted."""


@dataclass
class BootstrapResult:
    """Per-coefficient bootstrap summary; percentile intervals are the default."""

    B: int
    alpha: float
    seed: int
    names: list[str]
    estimate: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    normal_lower: np.ndarray
    normal_upper: np.ndarray
    failures: int
    replicates: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "B": self.B,
            "alpha": self.alpha,
            "seed": self.seed,
            "failures": self.failures,
            "coefficients": [
                {
                    "name": n,
                    "estimate": float(e),
                    "se": float(s),
                    "percentile": [float(lo), float(hi)],
                    "normal": [float(nl), float(nh)],
                }
                for n, e, s, lo, hi, nl, nh in zip(
                    self.names, self.estimate, self.se, self.lower, self.upper, self.normal_lower, self.normal_upper
                )
            ],
        }

    def to_text(self) -> str:
        lvl = 100 * (1 - self.alpha)
        lines = [f"bootstrap: B={self.B} ({self.failures} failed), {lvl:g}% intervals, seed {self.seed}"]
        if self.B < 50:
            lines.append(f"note: B={self.B} is too small for reliable intervals")
        width = max(len(n) for n in self.names)
        for n, e, s, lo, hi in zip(self.names, self.estimate, self.se, self.lower, self.upper):
            lines.append(f"  {n:<{width}}  {e: .5f}  se {s:.5f}  [{lo: .5f}, {hi: .5f}]")
        return "\n".join(lines) + "\n"


def _as_vector(out) -> tuple[np.ndarray, bool]:
    if hasattr(out, "flat_beta"):
        return out.flat_beta(), bool(out.converged)
    return np.asarray(out, dtype=float).ravel(), True


def bootstrap(
    estimator: Callable[[PanelDataset, int], object],
    data: PanelDataset,
    B: int,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int = 1,
    names: Sequence[str] | None = None,
    point=None,
) -> BootstrapResult:
    """Resample units with replacement ``B`` times and re-run ``estimator`` on each resample.

    ``estimator(data, seed)`` returns an :class:`EstimateReport` or a
    coefficient vector and must refit any nuisance models itself.
    Replicate ``b`` draws its units and its estimator seed from the
    sub-stream keyed by ``b``.  Failed replicates (errors or
    non-convergence) are dropped and counted; more than 20% failures
    raises :class:`BootstrapError`.
    """
    if B < 2:
        raise PanelError("bootstrap needs B >= 2")
    if not 0 < alpha < 1:
        raise PanelError("alpha must be in (0, 1)")
    if point is None:
        point = estimator(data, seed)
    est, _ = _as_vector(point)
    if names is None:
        names = point.flat_names() if hasattr(point, "flat_names") else [f"b{k}" for k in range(est.size)]

    def replicate(b):
        rng = substream(seed, b)
        idx = rng.integers(0, data.n, size=data.n)
        rep_seed = int(rng.integers(0, 2**31 - 1))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                vec, ok = _as_vector(estimator(data.take(idx), rep_seed))
        except _FAILURES:
            return None
        if not ok or vec.shape != est.shape or not np.isfinite(vec).all():
            return None
        return vec

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(replicate, range(B)))
    else:
        results = [replicate(b) for b in range(B)]
    good = [r for r in results if r is not None]
    failures = B - len(good)
    if failures > MAX_FAILURE_RATE * B:
        raise BootstrapError(f"{failures} of {B} bootstrap replicates failed")
    reps = np.array(good)
    se = reps.std(axis=0, ddof=1) if len(good) > 1 else np.zeros(est.size)
    se[np.ptp(reps, axis=0) == 0] = 0.0  # no rounding residue when replicates agree
    lower, upper = np.quantile(reps, [alpha / 2, 1 - alpha / 2], axis=0)
    z = stats.norm.ppf(1 - alpha / 2)
    return BootstrapResult(
        B=B,
        alpha=alpha,
        seed=seed,
        names=list(names),
        estimate=est,
        se=se,
        lower=lower,
        upper=upper,
        normal_lower=est - z * se,
        normal_upper=est + z * se,
        failures=failures,
        replicates=reps,
    )
