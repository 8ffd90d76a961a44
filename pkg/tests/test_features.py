from __future__ import annotations

import numpy as np
import pytest

from hrmsm.data import PanelError
from hrmsm.design import TimeFnRegistry
from hrmsm.features import History, check_features, feature_matrix, parse_features


def _hist():
    h = History.empty(2, 3, 1, scores=[0.0, 1.0, 2.0])
    h.A[:] = [[2, 1, 0, 2], [1, 1, 2, 0]]
    h.L[:, :, 0] = [[10, 11, 12, 13, 14], [20, 21, 22, 23, 24]]
    return h


def test_lags_and_padding():
    h = _hist()
    terms = parse_features(["a_prev:1", "a_prev:3", "a_mean:2", "l:W:0", "l:W:5", "j"])
    X = feature_matrix(terms, h, 2, ("W",))
    # A(1); A(-1) pads with the reference level; mean of A(1), A(0); L(2); L(-3) clips to L(0)
    np.testing.assert_array_equal(X, [[1, 0, 1.5, 12, 10, 2], [1, 0, 1.0, 22, 20, 2]])


def test_window_floor_hides_earlier_treatments():
    h = _hist()
    X = feature_matrix(parse_features(["a_prev:1", "a_prev:2"]), h, 3, ("W",), a_floor=2)
    np.testing.assert_array_equal(X, [[0, 0], [2, 0]])
    X = feature_matrix(parse_features(["a_prev:1"]), h, 3, ("W",), a_floor=np.array([3, 0]))
    np.testing.assert_array_equal(X[:, 0], [0, 2])


def test_products_time_functions_and_v():
    h = _hist()
    reg = TimeFnRegistry.default()
    X = feature_matrix(parse_features(["a_prev:1*l:W:1", "fn:season:1", "v:0"]), h, 3, ("W",), reg, v=np.array([[5], [6]]))
    np.testing.assert_array_equal(X[:, 0], [0 * 12, 2 * 22])
    np.testing.assert_array_equal(X[:, 1], reg("season", 2))
    np.testing.assert_array_equal(X[:, 2], [5, 6])


def test_grammar_errors():
    with pytest.raises(PanelError):
        parse_features(["a_prev:0"])
    with pytest.raises(PanelError):
        parse_features(["l:W"])
    terms = parse_features(["l:W:0"])
    with pytest.raises(PanelError, match="predecessor"):
        check_features(terms, ("W", "Z"), "q", position=0)
    check_features(terms, ("W", "Z"), "q", position=1)
    with pytest.raises(PanelError, match="numerator"):
        check_features(terms, ("W",), "numerator")
    with pytest.raises(PanelError, match="v atoms"):
        check_features(parse_features(["v:0"]), ("W",), "g")


def test_tile_and_take():
    h = _hist()
    t = h.tile(3)
    assert t.N == 6
    np.testing.assert_array_equal(t.A[4], h.A[0])
    t.A[0, 0] = 0
    assert h.A[0, 0] == 2
    np.testing.assert_array_equal(h.take([1]).L[0], h.L[1])
