import numpy as np
import pytest

from hsmfg.errors import AmbiguousEventError, FiniteEscapeError
from hsmfg.matfun import Const, Sampled
from hsmfg.riccati import (GapFunction, GapSide, apply_jump_condition,
                           feedback_gain, find_event_time, integrate_riccati,
                           stopping_gap, switch_gap)

from conftest import entry, brute_force_switch_times


class Sys:
    def __init__(self, A, B, R, P, label="sys"):
        self.A = A if hasattr(A, "table") else Const(A)
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.P = np.atleast_2d(np.asarray(P, dtype=float))
        self.S = self.B @ np.linalg.solve(self.R, self.B.T)
        self.label = label


SCALAR = Sys([[0.0]], [[1.0]], [[1.0]], [[1.0]], "scalar")


def test_zero_system_stays_zero():
    sys = Sys([[0.0]], [[0.0]], [[1.0]], [[0.0]])
    sol = integrate_riccati(sys, 1.0, [[0.0]], 0.0, 0.01)
    assert np.all(sol.Pi == 0.0)
    assert np.all(sol.gain == 0.0)


def test_tanh_closed_form():
    sol = integrate_riccati(SCALAR, 2.0, [[0.0]], 0.0, 0.01)
    expect = np.tanh(2.0 - sol.grid)
    assert np.max(np.abs(sol.Pi[:, 0, 0] - expect)) < 1e-9
    assert feedback_gain(sol, 1.0)[0, 0] == pytest.approx(-np.tanh(1.0),
                                                          abs=1e-9)


def test_gain_shape_and_window_errors():
    sys = Sys(np.zeros((3, 3)), np.eye(3)[:, :2], np.eye(2), np.eye(3))
    sol = integrate_riccati(sys, 1.0, np.eye(3), 0.0, 0.1)
    assert feedback_gain(sol, 0.55).shape == (2, 3)
    with pytest.raises(ValueError):
        feedback_gain(sol, 1.2)
    with pytest.raises(ValueError):
        integrate_riccati(sys, 1.0, np.eye(3), 1.5, 0.1)


def test_step_halving_order_at_least_3_5():
    errs = []
    for h in (0.08, 0.04, 0.02):
        a = integrate_riccati(SCALAR, 2.0, [[0.0]], 0.0, h, substeps=1)
        b = integrate_riccati(SCALAR, 2.0, [[0.0]], 0.0, h / 2, substeps=1)
        errs.append(np.max(np.abs(a.Pi[:, 0, 0] - b.Pi[::2, 0, 0])))
    order1 = np.log2(errs[0] / errs[1])
    order2 = np.log2(errs[1] / errs[2])
    assert min(order1, order2) >= 3.5


def test_finite_escape_raises():
    sys = Sys([[0.0]], [[1.0]], [[-1.0]], [[0.0]], "escaper")
    with pytest.raises(FiniteEscapeError) as exc:
        integrate_riccati(sys, 2.0, [[1.1]], 0.0, 0.01)
    assert "escaper" in str(exc.value)


def test_psd_monitor():
    from hsmfg.errors import DefinitenessError

    sys = Sys([[0.0]], [[0.0]], [[1.0]], [[-1.0]], "indefinite")
    with pytest.raises(DefinitenessError):
        integrate_riccati(sys, 1.0, [[0.0]], 0.0, 0.01, psd_check=True)


# -- jump conditions ----------------------------------------------------------


def test_jump_identity_is_exact(scalar_aut):
    e = scalar_aut.edge("q1_ab", "q2_ab")
    Pi = np.array([[2.0, 0.3, -0.1], [0.3, 1.0, 0.05], [-0.1, 0.05, 0.7]])
    out = apply_jump_condition(Pi, e, "major")
    assert np.array_equal(out, Pi)


def test_jump_dimension_drop_matches_oracle(sec4_automaton):
    e = sec4_automaton.edge("q1_ab", "q1_a")
    rng = np.random.default_rng(3)
    M = rng.normal(size=(4, 4))
    Pi_after = M @ M.T
    got = apply_jump_condition(Pi_after, e, "major")
    # independent elementwise multiply oracle
    psi, cost = e.psi_major, e.cost_major
    oracle = np.zeros((6, 6))
    for i in range(6):
        for j in range(6):
            acc = 0.0
            for p in range(4):
                for q in range(4):
                    acc += psi[p, i] * Pi_after[p, q] * psi[q, j]
            oracle[i, j] = acc + cost[i, j]
    assert np.max(np.abs(got - oracle)) < 1e-14


def test_jump_dropping_identity_example(scalar_aut):
    # Psi = [1 0 0; 0 1 0], C = 0 (zero tracking kills the projection cost)
    e = scalar_aut.edge("q1_ab", "q1_a")
    assert np.array_equal(e.psi_major,
                          np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    assert not np.any(e.cost_major)
    out = apply_jump_condition(np.eye(2), e, "major")
    assert np.array_equal(out, np.diag([1.0, 1.0, 0.0]))


def test_jump_minor_stop_gives_terminal_projection(scalar_aut):
    e = scalar_aut.edge("q2_a", "q2")
    Pi_after = np.array([[5.0]])
    out = apply_jump_condition(Pi_after, e, "a")
    assert np.array_equal(out,
                          scalar_aut.minor_terminal_weight(e.from_state, "a"))


def test_jump_rejects_wrong_dims_and_unknown_type(scalar_aut):
    e = scalar_aut.edge("q1_ab", "q1_a")
    with pytest.raises(ValueError):
        apply_jump_condition(np.eye(3), e, "major")
    with pytest.raises(KeyError):
        apply_jump_condition(np.eye(1), scalar_aut.edge("q2_a", "q2"), "b")


# -- gap functions ------------------------------------------------------------


def scalar_side(a, p=1.0, s=1.0):
    return GapSide(entry("const", a), np.array([[p]]), np.array([[s]]))


def test_identical_modes_gap_vanishes():
    side = scalar_side(0.7)
    pi = Sampled(0.0, 0.1, np.full((11, 1, 1), 0.4))
    gap = switch_gap(np.eye(1), np.zeros((1, 1)), side, side, pi)
    assert np.max(np.abs(gap.batch(np.linspace(0, 1, 7)))) < 1e-14


def test_stopping_gap_formula_constants():
    # constants: H = P + C A + A C - C S C (+ dC/dt = 0)
    A, P, C, S = 0.3, 1.0, 2.0, 0.5
    gap = stopping_gap(Const([[C]]), scalar_side(A, P, S))
    expect = P + 2 * C * A - C * S * C
    assert gap.matrix(1.23)[0, 0] == pytest.approx(expect, rel=1e-14)


def test_stopping_gap_time_varying_weight_rate_sign():
    # oracle: committing-time costs; the gap root must sit at the argmin
    c0, beta = 5.0, -0.5
    A, P, S = 0.3, 1.0, 1.0
    weight = entry("exp", c0, beta)
    gap = stopping_gap(weight, scalar_side(A, P, S),
                       weight_rate=weight.derivative())
    res = find_event_time(gap, (0.01, 17.99), 0.01)
    assert res.status == "event"
    cand, costs = brute_force_switch_times(
        lambda t: A, None, S, P, lambda s: c0 * np.exp(beta * s),
        18.0, 0.01, x0=1.0)
    assert abs(res.time - cand[np.argmin(costs)]) <= 0.0100001


def test_find_event_time_linear_root():
    gap = GapFunction(lambda ts: (ts - 5.0)[:, None, None], 1)
    res = find_event_time(gap, (0.0, 18.0), 0.01)
    assert res.status == "event"
    assert res.time == pytest.approx(5.0, abs=1e-9)


def test_find_event_time_degenerate_and_positive():
    zero = GapFunction(lambda ts: np.zeros((len(ts), 2, 2)), 2)
    assert find_event_time(zero, (0.0, 1.0), 0.1).status == "degenerate"
    pos = GapFunction(
        lambda ts: np.broadcast_to(np.eye(2), (len(ts), 2, 2)).copy(), 2)
    assert find_event_time(pos, (0.0, 1.0), 0.1).status == "already_positive"
    neg = GapFunction(
        lambda ts: -np.broadcast_to(np.eye(2), (len(ts), 2, 2)).copy(), 2)
    assert find_event_time(neg, (0.0, 1.0), 0.1).status == "no_event"


def test_find_event_time_inert_coordinates_reduced():
    def batch(ts):
        out = np.zeros((len(ts), 3, 3))
        out[:, 0, 0] = ts - 2.0
        return out

    res = find_event_time(GapFunction(batch, 3), (0.0, 6.0), 0.01)
    assert res.status == "event"
    assert res.time == pytest.approx(2.0, abs=1e-9)


def test_find_event_time_ambiguity_lists_candidates():
    gap = GapFunction(lambda ts: np.sin(ts)[:, None, None], 1)
    with pytest.raises(AmbiguousEventError) as exc:
        find_event_time(gap, (2.0, 14.0), 0.01, context="sin test")
    assert len(exc.value.candidates) == 2
    assert "sin test" in str(exc.value)


def test_find_event_time_scaling_invariance():
    # scaling P, R, C jointly by c > 0 scales the gap and keeps the root
    def make(c):
        weight = Const([[2.0 * c]])
        side = GapSide(entry("exp", -1.5, -0.4), np.array([[1.0 * c]]),
                       np.array([[0.5 / c]]))
        return stopping_gap(weight, side)

    t1 = find_event_time(make(1.0), (0.01, 17.99), 0.01).time
    t2 = find_event_time(make(37.0), (0.01, 17.99), 0.01).time
    assert t1 == pytest.approx(t2, abs=1e-9)


def test_two_mode_scalar_root_matches_sign_scan():
    # A1 = 1, A2 = -1, B = 1, R = 1, P1 = P2 = 1, Psi = 1, C = 0
    after_sys = Sys([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    sol = integrate_riccati(after_sys, 6.0, [[1.0]], 0.0, 0.01)
    before = scalar_side(1.0)
    after = GapSide(Const([[-1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    gap = switch_gap(np.eye(1), np.zeros((1, 1)), before, after, sol.pi_fun())
    res = find_event_time(gap, (0.01, 5.99), 0.01)
    # dense-grid oracle: first sign change of the gap on 10^4 points
    ts = np.linspace(0.01, 5.99, 10_000)
    vals = gap.batch(ts)[:, 0, 0]
    idx = np.flatnonzero((vals[:-1] < 0) & (vals[1:] >= 0))
    if res.status == "event":
        assert len(idx) >= 1
        assert abs(res.time - ts[idx[0]]) <= 0.01
    else:
        assert len(idx) == 0


def test_value_function_identity_monte_carlo():
    # J(x0) - J(y0) for a single controlled mode matches the Pi(0) quadratic
    rng = np.random.default_rng(7)
    sys = Sys([[0.2]], [[1.0]], [[1.0]], [[1.0]])
    T, h = 2.0, 0.01
    sol = integrate_riccati(sys, T, [[0.5]], 0.0, h)
    K = sol.Pi.shape[0] - 1
    sigma = 0.05
    runs = 4000
    noise = rng.standard_normal((runs, K)) * np.sqrt(h) * sigma

    def mc_cost(x0):
        x = np.full(runs, x0)
        cost = np.zeros(runs)
        for i in range(K):
            u = -sol.gain[i, 0, 0] * x
            cost += (x * x + u * u) * h
            x = x + (0.2 * x + u) * h + noise[:, i]
        cost += 0.5 * x * x
        return cost.mean(), cost.std() / np.sqrt(runs)

    j1, s1 = mc_cost(1.0)
    j2, s2 = mc_cost(2.0)
    expect = (4.0 - 1.0) * sol.Pi[0, 0, 0]
    assert j2 - j1 == pytest.approx(expect, abs=4 * (s1 + s2) + 2e-3)


def test_adjoint_identity_finite_difference():
    # gradient of the deterministic cost-to-go equals 2 Pi(t) x(t)
    sys = Sys(entry("exp", 0.3, -0.2), [[1.0]], [[1.0]], [[1.0]])
    T, h = 2.0, 2e-5
    sol = integrate_riccati(sys, T, [[1.0]], 0.0, h)
    A_tab = sys.A.table(sol.grid)[:, 0, 0]
    gain = sol.gain[:, 0, 0]
    K = len(sol.grid) - 1
    i0 = K // 3

    a_cl = A_tab - gain
    rates = 1.0 + gain * gain

    def cost_to_go(i_from, x_init):
        x = float(x_init)
        cost = 0.0
        for i in range(i_from, K):
            cost += rates[i] * x * x * h
            x = x + a_cl[i] * x * h
        return cost + x * x

    x_mid = 1.0
    for i in range(i0):
        x_mid = x_mid + a_cl[i] * x_mid * h
    eps = 1e-5
    grad = (cost_to_go(i0, x_mid + eps) - cost_to_go(i0, x_mid - eps)) / (2 * eps)
    expect = 2.0 * sol.Pi[i0, 0, 0] * x_mid
    assert grad == pytest.approx(expect, rel=1e-4)


def test_csv_export(tmp_path):
    sol = integrate_riccati(SCALAR, 1.0, [[0.0]], 0.0, 0.25)
    path = tmp_path / "riccati.csv"
    sol.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,pi_1_1"
    assert len(lines) == 6
