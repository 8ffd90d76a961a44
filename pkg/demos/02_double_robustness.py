"""Double robustness: one nuisance model may be wrong, but not both.

Two configurations ship with the package.  ``reference_wrong_g`` drops W
from the treatment model; ``reference_wrong_q`` drops W from the outcome
model.  IPTW relies on g only and G-computation on Q only, so each breaks
under one of them.  The double robust estimator stays unbiased in both.
With Q wrong it leans on the weights and so is about as noisy as IPTW; the
acceptance suite compares its error with a bootstrap SE for that reason.

Run:  python demos/02_double_robustness.py
"""

from __future__ import annotations

import warnings

import numpy as np

from hrmsm import glm
from hrmsm.config import load_config
from hrmsm.pipeline import run_estimator, settings_from_config
from hrmsm.simulation import OracleRequest, builtin_config, oracle_beta, simulate_panel

warnings.simplefilter("ignore", glm.GlmWarning)

base = load_config(builtin_config("reference.yaml"))
data = simulate_panel(base.dgp, n=2000, seed=base.seed)
spec = base.msm(data.K)
truth = oracle_beta(
    OracleRequest(base.dgp, spec.window, spec.term_names, spec.link, spec.mode, M_oracle=200_000, seed=1)
).beta

print(f"{'config':>18} {'estimator':>10}   max |error|")
for config in ("reference", "reference_wrong_g", "reference_wrong_q"):
    cfg = load_config(builtin_config(f"{config}.yaml"))
    st = settings_from_config(cfg, data.K, M=20_000)
    st.M_aug = 20
    for name in ("iptw", "gcomp", "dr"):
        beta = run_estimator(name, data, st, seed=2).flat_beta()
        print(f"{config:>18} {name:>10}   {np.max(np.abs(beta - truth)):.4f}")
