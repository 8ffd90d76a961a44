"""Choosing the history size s: weights grow with the window.

An HRMSM indexes the outcome by the last s treatments only, so its IPT
weights multiply s inverse probabilities instead of K+1.  The effective
sample size shrinks fast as s grows, which is the practical case for a
short window.  Stabilizing the weights and truncating the largest ones are
the two usual remedies; both are shown for s = 3.

Run:  python demos/03_window_size_and_weights.py
"""

from __future__ import annotations

import warnings

from hrmsm import glm
from hrmsm.config import load_config
from hrmsm.simulation import builtin_config, simulate_panel
from hrmsm.treatment import compute_weights, eta_diagnostic, fit_g

warnings.simplefilter("ignore", glm.GlmWarning)

cfg = load_config(builtin_config("reference.yaml"))
data = simulate_panel(cfg.dgp, n=2000, seed=cfg.seed)
g = fit_g(data, cfg.g_spec)

print("   s   weights    max weight      ESS   ESS/n  flagged (> 50)")
for s in (1, 2, 3, 5, 8, 10):
    wr = compute_weights(g, data, cfg.window(data.K, s))
    diag = eta_diagnostic(wr, threshold=50)
    n = wr.flat.size
    print(
        f"{s:>4} {n:>9} {diag.max_weight:>13.1f} {diag.effective_sample_size:>8.0f}"
        f"   {diag.effective_sample_size / n:.3f}  {diag.n_flagged:>6}"
    )

# s = 3: stabilized weights put a fitted marginal window law in the numerator.
window = cfg.window(data.K, 3)
gs = fit_g(data, cfg.g_spec, numerator=["const", "a_prev:1"], window=window)
for label, wr in (
    ("unstabilized", compute_weights(gs, data, window)),
    ("stabilized", compute_weights(gs, data, window, style="stabilized")),
    ("truncated at q99", compute_weights(gs, data, window, truncation={"quantile": 0.99})),
):
    summ = wr.summary()
    print(f"{label:>17}: mean {summ['mean']:.3f}, variance {summ['variance']:.2f}, max {summ['max']:.1f}")
