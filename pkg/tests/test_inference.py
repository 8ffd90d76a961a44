from __future__ import annotations

import numpy as np
import pytest

from hrmsm import glm
from hrmsm.data import PanelDataset, PanelError, TreatmentLevels, WindowSpec
from hrmsm.design import MsmSpec
from hrmsm.estimators import iptw_pooled, naive_regression
from hrmsm.inference import BootstrapError, bootstrap
from hrmsm.simulation import load_dgp, simulate_panel
from hrmsm.treatment import fit_g

SPEC = MsmSpec("pooled", "identity", ["const", "a_lag:0", "a_lag:1"], WindowSpec.full(2, 9))


@pytest.fixture(scope="module")
def data():
    return simulate_panel(load_dgp("reference"), 300, seed=5)


def _iptw(d, seed):
    return iptw_pooled(d, SPEC, fit_g(d, ["const", "l:W:0", "a_prev:1"]))


def test_identical_units_give_zero_se():
    rng = np.random.default_rng(0)
    K = 4
    one = dict(
        A=rng.integers(0, 2, K + 1), L=rng.normal(size=(K + 2, 1)), Y=np.r_[np.nan, rng.normal(size=K + 1)]
    )
    n = 20
    same = PanelDataset(
        ids=np.arange(n),
        treatments=np.tile(one["A"], (n, 1)),
        covariates=np.tile(one["L"], (n, 1, 1)),
        outcome=np.tile(one["Y"], (n, 1)),
        covariate_names=("W",),
        levels=TreatmentLevels.binary(),
    )
    res = bootstrap(lambda d, s: d.outcome[:, 1:].mean(axis=0), same, B=25, seed=1)
    np.testing.assert_array_equal(res.se, 0.0)
    np.testing.assert_array_equal(res.lower, res.estimate)
    np.testing.assert_array_equal(res.upper, res.estimate)


def test_two_replicates(data):
    res = bootstrap(_iptw, data, B=2, seed=3)
    assert res.B == 2 and res.replicates.shape == (2, 3)
    assert np.all(res.upper - res.lower > 0)
    assert "too small" in res.to_text()
    assert res.to_dict()["coefficients"][1]["name"] == "a_lag:0"


def test_deterministic_and_thread_independent(data):
    a = bootstrap(_iptw, data, B=12, seed=7, threads=1)
    b = bootstrap(_iptw, data, B=12, seed=7, threads=4)
    c = bootstrap(_iptw, data, B=12, seed=8)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    assert not np.array_equal(a.replicates, c.replicates)


def test_interval_contains_estimate_for_smooth_statistic(data):
    res = bootstrap(lambda d, s: naive_regression(d, SPEC), data, B=100, seed=2)
    assert np.all((res.lower <= res.estimate) & (res.estimate <= res.upper))
    np.testing.assert_allclose(res.normal_upper - res.estimate, 1.959964 * res.se, rtol=1e-5)


def test_failures_are_counted_and_bounded(data):
    calls = {"n": 0}

    def flaky(d, seed):
        calls["n"] += 1
        if seed % 10 == 0:
            raise glm.GlmError("boom")
        return np.array([d.outcome[:, 1].mean()])

    res = bootstrap(flaky, data, B=40, seed=1, point=np.array([0.0]))
    assert res.failures == 40 - res.replicates.shape[0]

    def broken(d, seed):
        raise glm.GlmError("always")

    with pytest.raises(BootstrapError, match="40 of 40"):
        bootstrap(broken, data, B=40, seed=1, point=np.array([0.0]))


def test_argument_checks(data):
    with pytest.raises(PanelError):
        bootstrap(_iptw, data, B=1)
    with pytest.raises(PanelError):
        bootstrap(_iptw, data, B=5, alpha=1.5)
