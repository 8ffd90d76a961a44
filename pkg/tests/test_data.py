from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrmsm.data import (
    PanelDataset,
    PanelError,
    PanelSchema,
    TreatmentLevels,
    VAtom,
    VSpec,
    WindowSpec,
    build_t_view,
    eval_v,
    flatten_view,
    load_panel,
    v_matrix,
    write_panel,
)

from conftest import make_panel


def _write_rows(path, rows, header=("id", "time", "A", "W", "Y")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _smallest_rows():
    rows = []
    for uid in ("u1", "u2"):
        for t in range(4):
            rows.append([uid, t, t % 2 if t < 3 else "", 0.1 * t, "" if t == 0 else 1.5 * t])
    return rows


def test_smallest_panel(tmp_path):
    path = tmp_path / "p.csv"
    _write_rows(path, _smallest_rows())
    data = load_panel(path, PanelSchema(covariates=("W",)))
    assert (data.n, data.K) == (2, 2)
    assert data.levels.labels == ("0", "1")
    np.testing.assert_array_equal(data.treatments[0], [0, 1, 0])
    assert np.isnan(data.outcome[0, 0])
    assert data.outcome[1, 3] == 4.5


def test_gap_names_unit_and_time(tmp_path):
    rows = [r for r in _smallest_rows() if not (r[0] == "u2" and r[1] == 2)]
    path = tmp_path / "gap.csv"
    _write_rows(path, rows)
    with pytest.raises(PanelError, match=r"'u2'.*time 2"):
        load_panel(path, PanelSchema(covariates=("W",)))


def test_missing_cell_rejected(tmp_path):
    rows = _smallest_rows()
    rows[5][3] = ""
    path = tmp_path / "cell.csv"
    _write_rows(path, rows)
    with pytest.raises(PanelError, match=r"'u2'.*'W'.*time 1"):
        load_panel(path, PanelSchema(covariates=("W",)))


def test_unknown_treatment_label_rejected(tmp_path):
    rows = _smallest_rows()
    rows[1][2] = "7"
    path = tmp_path / "lab.csv"
    _write_rows(path, rows)
    with pytest.raises(PanelError, match="not in"):
        load_panel(path, PanelSchema(covariates=("W",), treatment_levels={"0": 0, "1": 1}))


def test_inconsistent_lengths_rejected():
    with pytest.raises(PanelError):
        PanelDataset(
            ids=[0, 1],
            treatments=np.zeros((2, 3), int),
            covariates=np.zeros((2, 3, 1)),
            outcome=np.zeros((2, 4)),
            covariate_names=("W",),
            levels=TreatmentLevels.binary(),
        )


def test_counts_panel_of_quarterly_shape(tmp_path):
    data = make_panel(n=195, K=70, p=56, seed=1, kind="counts")
    schema = write_panel(data, tmp_path / "big.csv")
    back = load_panel(tmp_path / "big.csv", schema)
    assert (back.n, back.K, len(back.covariate_names)) == (195, 70, 56)
    np.testing.assert_array_equal(back.outcome[:, 1:], data.outcome[:, 1:])
    np.testing.assert_array_equal(back.trials[:, 1:], data.trials[:, 1:])
    assert back.outcome_at(5).shape == (195, 2)


def test_round_trip_simulated_reference(tmp_path, reference_dgp):
    from hrmsm.simulation import simulate_panel

    data = simulate_panel(reference_dgp, 2000, seed=3)
    schema = write_panel(data, tmp_path / "ref.csv")
    back = load_panel(tmp_path / "ref.csv", schema)
    assert (back.n, back.K) == (2000, 9)
    np.testing.assert_array_equal(back.treatments, data.treatments)
    np.testing.assert_array_equal(back.covariates, data.covariates)
    np.testing.assert_array_equal(back.outcome[:, 1:], data.outcome[:, 1:])
    assert back.levels == data.levels
    assert [str(i) for i in data.ids] == list(back.ids)


def test_take_and_unit():
    data = make_panel(n=5, K=3)
    sub = data.take([4, 4, 0])
    assert sub.n == 3
    np.testing.assert_array_equal(sub.treatments[0], data.treatments[4])
    u = data.unit(2)
    assert u.K == 3
    np.testing.assert_array_equal(u.covariates, data.covariates[2])
    rebuilt = PanelDataset.from_units(data.units)
    np.testing.assert_array_equal(rebuilt.covariates, data.covariates)


# windows and views


def test_window_validation():
    assert WindowSpec.full(3, 9).targets == tuple(range(2, 10))
    with pytest.raises(PanelError):
        WindowSpec(3, (1,))
    with pytest.raises(PanelError):
        WindowSpec(11, (9,)).validate(9)
    with pytest.raises(PanelError):
        WindowSpec(2, (10,)).validate(9)


def test_view_s2_k5_t4():
    unit = make_panel(n=1, K=5).unit(0)
    view = build_t_view(unit, WindowSpec(2, (4,)), 4)
    np.testing.assert_array_equal(view.window_treatments, unit.treatments[3:5])
    assert view.outcome == unit.outcome.values[5]
    a0, l0 = view.baseline_block
    np.testing.assert_array_equal(a0, unit.treatments[0:3])
    np.testing.assert_array_equal(l0, unit.covariates[0:4])


def test_view_full_history():
    unit = make_panel(n=1, K=4).unit(0)
    view = build_t_view(unit, WindowSpec(5, (4,)), 4)
    a0, l0 = view.baseline_block
    assert a0.size == 0 and l0.shape == (1, 1)
    np.testing.assert_array_equal(view.window_treatments, unit.treatments)


def test_view_s1_t0():
    unit = make_panel(n=1, K=3).unit(0)
    view = build_t_view(unit, WindowSpec(1, (0, 1)), 0)
    a0, l0 = view.baseline_block
    np.testing.assert_array_equal(view.window_treatments, unit.treatments[:1])
    assert a0.size == 0
    np.testing.assert_array_equal(l0, unit.covariates[:1])


def test_view_outside_targets():
    unit = make_panel(n=1, K=3).unit(0)
    with pytest.raises(PanelError, match="target"):
        build_t_view(unit, WindowSpec(2, (2,)), 3)


@settings(max_examples=60, deadline=None)
@given(K=st.integers(1, 8), data=st.data())
def test_view_flatten_is_truncation(K, data):
    s = data.draw(st.integers(1, K + 1))
    t = data.draw(st.integers(s - 1, K))
    kind = data.draw(st.sampled_from(["continuous", "binary", "counts"]))
    unit = make_panel(n=1, K=K, seed=K * 31 + t, kind=kind).unit(0)
    view = build_t_view(unit, WindowSpec(s, (t,)), t)
    flat = flatten_view(view)
    np.testing.assert_array_equal(flat["treatments"], unit.treatments[: t + 1])
    np.testing.assert_array_equal(flat["covariates"], unit.covariates[: t + 2])
    np.testing.assert_array_equal(flat["outcome"][1:], unit.outcome.values[1 : t + 2])
    if kind == "counts":
        np.testing.assert_array_equal(flat["trials"][1:], unit.outcome.trials[1 : t + 2])
    assert view.window_treatments.size == s


@settings(max_examples=30, deadline=None)
@given(K=st.integers(2, 8), s=st.integers(1, 3))
def test_views_overlap_consistently(K, s):
    # two views of the same unit agree on every shared time point
    s = min(s, K + 1)
    unit = make_panel(n=1, K=K, seed=K).unit(0)
    window = WindowSpec.full(s, K)
    flats = [flatten_view(build_t_view(unit, window, t)) for t in window.targets]
    for a, b in zip(flats, flats[1:]):
        m = a["treatments"].size
        np.testing.assert_array_equal(a["treatments"], b["treatments"][:m])
        np.testing.assert_array_equal(a["covariates"], b["covariates"][: m + 1])


# V


def test_v_empty():
    unit = make_panel(n=1, K=4).unit(0)
    view = build_t_view(unit, WindowSpec(2, (4,)), 4)
    assert eval_v(view, VSpec()).shape == (0,)


def test_v_window_start_and_baseline():
    data = make_panel(n=3, K=5, p=2, names=["W", "Z"])
    view = build_t_view(data.unit(1), WindowSpec(2, (4,)), 4)
    assert eval_v(view, VSpec((VAtom("W"),)))[0] == data.covariates[1, 3, 0]
    two = eval_v(view, VSpec((VAtom("W", "study_baseline"), VAtom("Z", "window_start"))))
    np.testing.assert_array_equal(two, [data.covariates[1, 0, 0], data.covariates[1, 3, 1]])
    vs = VSpec((VAtom("W", "study_baseline"), VAtom("Z")))
    np.testing.assert_array_equal(v_matrix(data, vs, 4, 2)[1], two)


def test_v_unknown_covariate():
    with pytest.raises(PanelError):
        VSpec((VAtom("nope"),)).validate(("W",))
    with pytest.raises(PanelError):
        VAtom("W", "sometime")
