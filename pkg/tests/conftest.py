from __future__ import annotations

import warnings

import numpy as np
import pytest

from hrmsm import glm
from hrmsm.data import PanelDataset, TreatmentLevels
from hrmsm.simulation import load_dgp


def make_panel(n=2, K=2, p=1, seed=0, kind="continuous", names=None):
    """Small random panel with binary treatment."""
    rng = np.random.default_rng(seed)
    A = rng.integers(0, 2, size=(n, K + 1))
    L = rng.normal(size=(n, K + 2, p))
    trials = None
    if kind == "counts":
        trials = rng.integers(1, 20, size=(n, K + 2)).astype(float)
        Y = np.floor(trials * rng.uniform(size=(n, K + 2)))
    elif kind == "binary":
        Y = rng.integers(0, 2, size=(n, K + 2)).astype(float)
    else:
        Y = rng.normal(size=(n, K + 2))
    Y[:, 0] = np.nan
    return PanelDataset(
        ids=np.arange(n),
        treatments=A,
        covariates=L,
        outcome=Y,
        covariate_names=tuple(names or [f"L{c}" for c in range(p)]),
        levels=TreatmentLevels.binary(),
        outcome_kind=kind,
        trials=trials,
    )


@pytest.fixture(scope="session")
def reference_dgp():
    return load_dgp("reference")


@pytest.fixture(scope="session")
def randomized_dgp():
    return load_dgp("randomized")


@pytest.fixture(autouse=True)
def _quiet_glm():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", glm.GlmWarning)
        yield


def small_dgp(K=4, treatment=None, w_law=None, w_baseline=None, outcome=None, **extra):
    """Mapping for a one-covariate binary-treatment DGP; pieces can be overridden."""
    d = {
        "name": "small",
        "K": K,
        "treatment_levels": {"0": 0, "1": 1},
        "outcome": {"name": "Y", "kind": "continuous"},
        "covariates": [
            {
                "name": "W",
                "baseline": w_baseline or {"dist": "normal", "mean": 0.0, "sd": 1.0},
                "law": w_law or {"family": "gaussian", "sd": 1.0, "coef": {"l:W:1": 0.5, "a_prev:1": -0.5}},
            }
        ],
        "treatment": treatment or {"family": "bernoulli", "coef": {"const": 0.0, "l:W:0": 0.8}},
        "outcome_law": outcome
        or {"family": "gaussian", "sd": 1.0, "coef": {"const": 1.0, "a_prev:1": -0.5, "l:W:1": 1.0}},
    }
    d.update(extra)
    return d


# acceptance summary: one PASS/FAIL line per criterion, printed after the run

ACCEPTANCE: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 10


@pytest.fixture
def acceptance():
    """``record(k, ok, detail)`` stores the verdict for criterion ``k`` and returns ``ok``."""

    def record(k: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[k] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k:>2}: NOT RUN")
