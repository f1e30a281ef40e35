import math

import numpy as np
import pytest
from scipy.linalg import expm

from gfmstab.loops import AdController, full_linear_model, rap_model
from gfmstab.plant import ControlParams
from gfmstab.simulator import (DIVERGENCE_LIMIT, EventStep, InitialResidualTooLarge,
                               InvalidScenario, SimScenario, SimTrace, WindowTooShort,
                               auto_window, check_initial_state, decay_time,
                               dominant_frequency, initial_state, simulate)
from gfmstab.stability import closed_loop_poles

DROOP_I = ControlParams(law="droop-i", k_iq=2.99)


def test_flat_start_stays_put(nameplate):
    for cp in (ControlParams(law="droop"), DROOP_I):
        tr = simulate(SimScenario(nameplate, cp, t_end=1.0))
        _, op = initial_state(nameplate, cp)
        assert tr.diverged_at is None
        assert np.max(np.abs(tr["q"] - op.q)) < 1e-6
        assert np.max(np.abs(tr["p"] - op.p)) < 1e-6


def test_flat_start_with_ad(weak_grid):
    for kind in ("inv-current", "grid-current", "cap-voltage"):
        ad = AdController.design_example(kind)
        tr = simulate(SimScenario(weak_grid, ControlParams(law="droop", T_q=0.014), ad,
                                  t_end=0.2, record=("q", "z_d")))
        assert np.ptp(tr["q"]) < 1e-8


@pytest.mark.parametrize("kw, match", [
    (dict(dt=1e-4), "exceeds"),
    (dict(events=(EventStep(0.2, "control.k_iq", 3.0), EventStep(0.1, "control.k_iq", 4.0))),
     "sorted"),
    (dict(events=(EventStep(1.0, "control.k_iq", 3.0),)), r"\[0, t_end\)"),
    (dict(record=("q", "torque")), "unknown signal"),
    (dict(events=(EventStep(0.1, "ad.gain", 1e-4),)), "without an AD"),
    (dict(x0_offset={"flux": 0.1}), "unknown state"),
    (dict(t_end=0.0), "positive"),
])
def test_scenario_validation(nameplate, kw, match):
    with pytest.raises(InvalidScenario, match=match):
        SimScenario(nameplate, DROOP_I, **kw)


@pytest.mark.parametrize("target, value", [("control.law", 1.0), ("plant.L_g", 0.5),
                                           ("control.k_iq", math.nan)])
def test_event_validation(target, value):
    with pytest.raises(InvalidScenario):
        EventStep(0.1, target, value)


def test_check_initial_state(nameplate):
    x, _ = initial_state(nameplate, DROOP_I)
    assert check_initial_state(x, nameplate, DROOP_I) < 1e-10
    x[2] += 1e-3
    with pytest.raises(InitialResidualTooLarge):
        check_initial_state(x, nameplate, DROOP_I)


def test_divergence_is_flagged(nameplate):
    tr = simulate(SimScenario(nameplate, DROOP_I, t_end=0.1, x0_offset={"i_d": 2 * DIVERGENCE_LIMIT}))
    assert tr.diverged_at is not None and tr.diverged_at < 0.01
    assert tr.t[-1] <= tr.diverged_at + 1e-12


def _q_at(nameplate, dt, t_end=0.01):
    sc = SimScenario(nameplate, DROOP_I, t_end=t_end, dt=dt, record=("q",),
                     record_every=int(round(1e-4 / dt)), x0_offset={"v_d": 0.01})
    return simulate(sc)["q"]


def test_rk4_fourth_order(nameplate):
    q1, q2, q3 = (_q_at(nameplate, dt) for dt in (2e-5, 1e-5, 5e-6))
    ratio = np.max(np.abs(q1 - q2)) / np.max(np.abs(q2 - q3))
    assert ratio == pytest.approx(16, abs=4)


def test_small_signal_matches_linear_model(nameplate):
    dv = 1e-4
    tr = simulate(SimScenario(nameplate, DROOP_I, events=(EventStep(0.0, "grid.V_g", 1.0 + dv),),
                              t_end=0.3, record=("p", "q", "V"), record_every=10))
    m = full_linear_model(nameplate, DROOP_I)
    _, op = initial_state(nameplate, DROOP_I)
    A, b = m.A, m.B[:, 0] * dv
    Ainv_b = np.linalg.solve(A, b)
    # step response x(t) = A^-1 (e^{At} - I) b
    dq = np.array([m.C[1] @ (expm(A * t) @ Ainv_b - Ainv_b) for t in tr.t])
    err = tr["q"] - op.q - dq
    assert np.sqrt(np.mean(err ** 2)) < 0.02 * np.sqrt(np.mean(dq ** 2))


def _synthetic(f0, sigma, n=20000, dt=2e-5):
    t = np.arange(n) * dt
    return SimTrace(t=t, signals={"q": 1e-3 * np.exp(sigma * t) * np.sin(2 * np.pi * f0 * t)})


def test_dominant_frequency_synthetic():
    tr = _synthetic(830.0, 10.0)
    rep = dominant_frequency(tr, "q", (0.0, float(tr.t[-1])))
    assert rep.dominant_freq == pytest.approx(830.0, rel=5e-3)
    assert rep.growth_rate == pytest.approx(10.0, rel=0.05)
    assert "dominant_freq_hz" in rep.format()


def test_dominant_frequency_respects_f_min():
    tr = _synthetic(830.0, 0.0)
    tr.signals["q"] += 1e-2 * np.sin(2 * np.pi * 50 * tr.t)
    assert dominant_frequency(tr, "q", (0.0, 0.39)).dominant_freq == pytest.approx(50, rel=0.01)
    assert dominant_frequency(tr, "q", (0.0, 0.39), f_min=200).dominant_freq == pytest.approx(
        830, rel=5e-3)


def test_window_too_short():
    tr = _synthetic(830.0, 0.0)
    with pytest.raises(WindowTooShort):
        dominant_frequency(tr, "q", (0.0, 0.01))


def test_decay_time_synthetic():
    tr = _synthetic(830.0, -5.0, n=100000)
    # envelope falls to 1% after ln(100)/5 s
    assert decay_time(tr, "q", 0.0, 830.0) == pytest.approx(math.log(100) / 5, rel=0.1)


def test_trace_csv_round_trip(tmp_path, nameplate):
    tr = simulate(SimScenario(nameplate, DROOP_I, t_end=0.01, x0_offset={"v_d": 1e-3}))
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    back = SimTrace.from_csv(path)
    np.testing.assert_array_equal(back.t, tr.t)
    for k in tr.signals:
        np.testing.assert_array_equal(back[k], tr[k])


def test_growth_rate_matches_closed_loop_pole(nameplate):
    cp_hi = ControlParams(law="droop-i", k_iq=10.97)
    events = (EventStep(0.05, "control.k_iq", 10.97), EventStep(0.05, "grid.V_g", 1.0001))
    tr = simulate(SimScenario(nameplate, DROOP_I, events=events, t_end=1.0, record=("q",)))
    win = auto_window(tr, "q", 0.1, max_dev=0.05)
    rep = dominant_frequency(tr, "q", win, f_min=100)
    _, _, m = rap_model(nameplate, cp_hi)
    cl = closed_loop_poles(m)
    p = cl[np.argmax(cl.real)]
    assert rep.growth_rate > 0
    assert rep.growth_rate == pytest.approx(p.real, rel=0.2)
    # dq-frame oscillation sits at the pole frequency
    assert rep.dominant_freq == pytest.approx(abs(p.imag) / (2 * np.pi), rel=0.02)


def test_droop_stays_bounded_under_same_events(nameplate):
    cp = ControlParams(law="droop", T_q=0.051)
    events = (EventStep(0.05, "control.T_q", 0.014), EventStep(0.05, "grid.V_g", 1.0001))
    tr = simulate(SimScenario(nameplate, cp, events=events, t_end=1.0, record=("q",)))
    assert tr.diverged_at is None
    assert np.max(np.abs(np.diff(tr["q"][tr.t > 0.5]))) < 1e-6
