import numpy as np
import pytest

from hsmfg.errors import ScenarioError
from hsmfg.matfun import (Blocks, Const, Sampled, as_matfun,
                          entries_from_config, entries_to_config)


def test_entry_kinds_evaluate():
    ts = np.array([0.0, 0.5, 2.0])
    m = entries_from_config([[{"kind": "exp", "c": 2.0, "a": -1.0},
                              {"kind": "expcos", "c": 5.0, "a": -1.5, "b": 1.0}],
                             [{"kind": "expsin", "c": 5.0, "a": -2.0, "b": 1.0},
                              3.25]])
    tab = m.table(ts)
    assert np.allclose(tab[:, 0, 0], 2.0 * np.exp(-ts))
    assert np.allclose(tab[:, 0, 1], 5.0 * np.exp(-1.5 * ts) * np.cos(ts))
    assert np.allclose(tab[:, 1, 0], 5.0 * np.exp(-2.0 * ts) * np.sin(ts))
    assert np.allclose(tab[:, 1, 1], 3.25)
    assert not m.constant


def test_entries_derivative_closed_form():
    m = entries_from_config([[{"kind": "expcos", "c": 2.0, "a": -0.5,
                               "b": 3.0}]])
    d = m.derivative()
    ts = np.linspace(0.1, 2.0, 7)
    eps = 1e-6
    fd = (m.table(ts + eps) - m.table(ts - eps)) / (2 * eps)
    assert np.allclose(d.table(ts), fd, atol=1e-7)


def test_sampled_interpolates_and_clamps():
    vals = np.arange(12.0).reshape(3, 2, 2)
    s = Sampled(1.0, 0.5, vals)
    assert np.array_equal(s.at(1.5), vals[1])
    assert np.allclose(s.at(1.25), 0.5 * (vals[0] + vals[1]))
    assert np.array_equal(s.at(-3.0), vals[0])
    assert np.array_equal(s.at(99.0), vals[2])


def test_blocks_compose_and_zero_fill():
    top = Const(np.eye(2))
    right = Sampled(0.0, 1.0, np.arange(8.0).reshape(2, 2, 2))
    b = Blocks([[top, right], [None, Const(3.0 * np.eye(2))]])
    assert b.shape == (4, 4)
    tab = b.at(0.0)
    assert np.array_equal(tab[:2, :2], np.eye(2))
    assert np.array_equal(tab[2:, :2], np.zeros((2, 2)))
    assert np.array_equal(tab[:2, 2:], np.arange(4.0).reshape(2, 2))


def test_blocks_rejects_inconsistent_layout():
    with pytest.raises(ValueError):
        Blocks([[Const(np.eye(2)), Const(np.eye(3))]])
    with pytest.raises(ValueError):
        Blocks([[None, None], [Const(np.eye(2)), Const(np.eye(2))]])


def test_config_round_trip_and_errors():
    spec = [[{"kind": "exp", "c": 2.0, "a": -1.0}, 0.5]]
    m = entries_from_config(spec)
    assert entries_to_config(m) == [[{"kind": "exp", "c": 2.0, "a": -1.0},
                                     0.5]]
    with pytest.raises(ScenarioError):
        entries_from_config([[{"kind": "tanh", "c": 1.0}]])
    with pytest.raises(ScenarioError):
        entries_from_config([[{"kind": "exp", "c": 1.0, "q": 2.0}]])
    with pytest.raises(ScenarioError):
        entries_from_config([["nope"]])
    with pytest.raises(ScenarioError):
        entries_from_config([[1.0]], shape=(2, 2))


def test_as_matfun_passthrough():
    c = as_matfun([[1.0, 0.0], [0.0, 1.0]])
    assert isinstance(c, Const)
    assert as_matfun(c) is c
