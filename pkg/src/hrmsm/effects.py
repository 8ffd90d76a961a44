"""Time-varying effect of a unit change in mean window exposure, from a pooled fit."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import PanelError
from .design import TimeFnRegistry, parse_term

__all__ = ["effect_curve", "write_effect_curve"]


def effect_curve(
    term_names: Sequence[str],
    beta: Sequence[float],
    times: Sequence[int],
    registry: TimeFnRegistry | None = None,
    exposure: str = "a_mean",
) -> np.ndarray:
    """Derivative of the linear predictor with respect to the exposure atom, at each ``t``.

    For terms ``[const, a_mean, f1, f2, a_mean*f1, a_mean*f2, a_mean*f1*f2]``
    this is ``b1 + b4 f1(t) + b5 f2(t) + b6 f1(t) f2(t)``.  Terms may combine
    the exposure with ``t`` and ``fn:`` atoms only.
    """
    registry = registry or TimeFnRegistry.default()
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size != len(term_names):
        raise PanelError("effect curves need a pooled report (one coefficient per term)")
    target = parse_term(exposure).factors[0]
    t = np.asarray(times, dtype=float)
    curve = np.zeros(t.shape)
    found = timed = False
    for name, b in zip(term_names, beta):
        factors = parse_term(name).factors
        hits = sum(f == target for f in factors)
        if hits == 0:
            continue
        if hits > 1:
            raise PanelError(f"term {name!r} is not linear in {exposure}")
        found = True
        value = np.full(t.shape, b)
        for f in factors:
            if f == target or f.kind == "const":
                continue
            if f.kind == "t":
                value = value * t
            elif f.kind == "fn":
                value = value * registry(f.arg, t)
            else:
                raise PanelError(f"term {name!r}: {f} makes the effect depend on more than time")
            timed = True
        curve = curve + value
    if not found:
        raise PanelError(f"the report has no {exposure} term, so there is no exposure effect")
    has_time = any(parse_term(n).has_time for n in term_names)
    if not (timed or has_time):
        raise PanelError("the report has no time atoms; the effect does not vary with t")
    return curve


def write_effect_curve(path, times, values) -> None:
    with open(path, "w") as fh:
        fh.write("t,effect\n")
        for t, v in zip(times, values):
            fh.write(f"{int(t)},{float(v)!r}\n")
