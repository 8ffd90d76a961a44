"""A binomial HRMSM for quarterly counts and its time-varying exposure effect.

The synthetic count process has three exposure levels, a confounder W and
outcome counts C(t+1) out of N(t+1) trials.  The MSM models the log-odds of
C/N through the mean exposure over the last four quarters, a year trend, a
half-year season indicator and their interactions:

    logit p = b0 + b1 a + b2 year + b3 season + b4 a year + b5 a season + b6 a year season

The effect of one unit of mean exposure at time t is then
b1 + b4 year(t) + b5 season(t) + b6 year(t) season(t), which
``effect_curve`` evaluates from the fitted coefficients.

Run:  python demos/04_count_outcomes_effect_curve.py   (about 10 seconds)
"""

from __future__ import annotations

import warnings

import numpy as np

from hrmsm import glm
from hrmsm.config import load_config
from hrmsm.effects import effect_curve
from hrmsm.pipeline import run_estimator, settings_from_config
from hrmsm.simulation import builtin_config, simulate_panel

warnings.simplefilter("ignore", glm.GlmWarning)

cfg = load_config(builtin_config("synthetic52.yaml"))
data = simulate_panel(cfg.dgp, n=195, seed=cfg.seed)
print(f"{data.n} units, quarters 0..{data.K + 1}, exposure levels {data.levels.labels}")

st = settings_from_config(cfg, data.K)
rep = run_estimator("gcomp", data, st, seed=cfg.seed)
truth = np.array(list(cfg.dgp.source["outcome_law"]["coef"].values()), dtype=float)

print(f"\n{'term':>28} {'generating':>11} {'G-comp':>9}")
for name, b0, b in zip(rep.term_names, truth, rep.beta):
    print(f"{name:>28} {b0:>11.3f} {b:>9.3f}")

curve = effect_curve(rep.term_names, rep.beta, rep.times, st.spec.registry)
print("\nexposure effect (log-odds per unit of mean exposure), first two years and last year:")
for t, v in list(zip(rep.times, curve))[:8] + list(zip(rep.times, curve))[-4:]:
    print(f"  t={t:>2}: {v: .3f}")
