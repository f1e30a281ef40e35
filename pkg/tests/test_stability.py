import math

import numpy as np
import pytest

from gfmstab.loops import AdController, char_coeffs_lossless, rap_model
from gfmstab.plant import ControlParams, PlantParams, solve_operating_point
from gfmstab.poly import Polynomial, roots
from gfmstab.stability import (CrossCheckFailure, PoleOnContour, closed_loop_poles, margins,
                               nyquist, rhp_count, routh, verdict)
from helpers import nearest, ol_from_tf


# ----------------------------------------------------------------- Routh

@pytest.mark.parametrize("coeffs, rhp", [
    ([6, 11, 6, 1], 0),             # (s+1)(s+2)(s+3)
    ([8, 2, 1, 1], 2),
    ([-1, 0, 1], 1),                # s^2 - 1
    ([10, 11, 4, 2, 2, 1], 2),      # zero pivot in the s^3 row
    ([1, 1, 1, 1, 1, 1], 2),
])
def test_routh_examples(coeffs, rhp):
    rep = routh(Polynomial(coeffs))
    assert rep.rhp_count == rep.sign_changes == rhp


def test_routh_zero_pivot_uses_epsilon():
    rep = routh(Polynomial([10, 11, 4, 2, 2, 1]))
    assert rep.used_epsilon
    limits = [e.limit for e in rep.first_column]
    assert -math.inf in limits


def test_routh_zero_row_uses_auxiliary_polynomial():
    # (s^2 + 1)(s + 1)(s + 2): imaginary pair, no RHP roots
    rep = routh(Polynomial.from_roots([1j, -1j, -1, -2]))
    assert rep.zero_rows == [1]
    assert rep.rhp_count == 0


def test_routh_rejects_constant():
    with pytest.raises(ValueError):
        routh(Polynomial([3.0]))


def test_routh_matches_roots_on_random_polynomials(rng):
    checked = 0
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        c = rng.normal(size=n + 1)
        if abs(c[-1]) < 1e-2 or abs(c[0]) < 1e-2:
            continue
        p = Polynomial(c)
        r = roots(p, tol=1e-8)
        # guard band: skip near-imaginary roots
        if np.any(np.abs(r.real) < 1e-6 * np.maximum(np.abs(r), 1.0)):
            continue
        rep = routh(p)
        assert not rep.inconclusive
        assert rep.rhp_count == np.sum(r.real > 0), c
        checked += 1
    assert checked > 900


def test_routh_lossless_quintic(nameplate):
    pp = nameplate.without_losses()
    cp = ControlParams(law="droop-i", k_iq=2.99)
    op = solve_operating_point(pp, cp)
    rep = routh(char_coeffs_lossless(pp, op, cp.D_q, cp.k_pq, cp.k_iq).polynomial())
    col = rep.first_column
    assert rep.used_epsilon
    assert [e.power for e in col[:4]] == [5, 4, 3, 2]
    assert col[1].leading_term == "1*eps^1"
    assert col[2].limit == -math.inf
    assert col[3].sign > 0
    prefix = [e.sign for e in col[:4]]
    assert sum(a != b for a, b in zip(prefix, prefix[1:])) == 2
    assert rep.rhp_count >= 2


def test_routh_report_format():
    text = routh(Polynomial([8, 2, 1, 1])).format()
    assert "sign_changes=2" in text
    assert text.splitlines()[1] == "power,leading_term,limit,sign"


# --------------------------------------------------------------- Nyquist

def test_first_order_lag_no_encirclement():
    m = ol_from_tf([0.5], [1, 1])
    rep = nyquist(m)
    assert rep.encirclements == 0
    assert rep.closest_approach == pytest.approx(1.0, abs=1e-6)
    assert rep.G[0] == pytest.approx(0.5)


def test_third_order_lag_encircles_twice():
    m = ol_from_tf([10], [1, 3, 3, 1])
    rep = nyquist(m)
    v = verdict(m, rep)
    assert (v.P, v.N, v.Z) == (0, 2, 2)
    assert not v.stable and v.minimum_phase
    assert rhp_count(closed_loop_poles(m), 1e-9) == 2


def test_unstable_open_loop_stabilized():
    m = ol_from_tf([2], [-1, 1])
    v = verdict(m, nyquist(m))
    assert (v.P, v.N, v.Z) == (1, -1, 0)
    assert v.stable and not v.minimum_phase


def test_refinement_invariance(nameplate):
    _, _, m = rap_model(nameplate.replace(L_g=0.5), ControlParams(law="droop-i", k_iq=10.97))
    a, b = nyquist(m, pts=500), nyquist(m, pts=1000)
    assert a.winding_number == b.winding_number
    assert a.closest_approach == pytest.approx(b.closest_approach, rel=1e-3)


def test_lossless_plant_pole_on_contour():
    pp = PlantParams(L_g=0.2).without_losses()
    _, _, m = rap_model(pp, ControlParams(law="droop", T_q=0.051))
    with pytest.raises(PoleOnContour, match="resistance"):
        nyquist(m)


def test_nyquist_csv(tmp_path):
    rep = nyquist(ol_from_tf([0.5], [1, 1]), pts=50)
    path = tmp_path / "n.csv"
    rep.to_csv(path, hz=True)
    rows = path.read_text().splitlines()
    assert rows[0] == "freq_hz,re,im"
    assert len(rows) == rep.omega.size + 1
    assert float(rows[1].split(",")[1]) == 0.5


# --------------------------------------------------------------- margins

def test_margins_third_order_lag():
    m = ol_from_tf([10], [1, 3, 3, 1])
    mr = margins(m)
    # phase -180 at sqrt(3), |G| = 10/8 there
    assert mr.gm_omega == pytest.approx(math.sqrt(3), rel=1e-9)
    assert mr.gain_margin == pytest.approx(-20 * math.log10(1.25), rel=1e-9)
    assert mr.phase_margin < 0
    assert mr.reliable


def test_margins_flagged_unreliable_for_unstable_open_loop():
    mr = margins(ol_from_tf([2], [-1, 1]))
    assert not mr.reliable and mr.P == 1


def test_margins_without_crossings():
    mr = margins(ol_from_tf([0.5], [1, 1]))
    assert mr.gain_margin == math.inf and mr.phase_margin == math.inf


# ------------------------------------------------------- closed loop

def test_closed_loop_simple_lag():
    cl = closed_loop_poles(ol_from_tf([1], [1, 1]))
    np.testing.assert_allclose(cl, [-2.0])


def test_closed_loop_weak_grid_frequency(weak_grid):
    _, _, m = rap_model(weak_grid, ControlParams(law="droop-i", k_iq=10.97))
    cl = closed_loop_poles(m)
    assert np.sum(cl.real > 0) == 4
    # the faster-growing pair sets the observed oscillation
    f = abs(cl[np.argmax(cl.real)].imag) / (2 * math.pi)
    assert f == pytest.approx(710, rel=0.05)


def test_cross_check_detects_inconsistent_realization():
    import dataclasses
    m = ol_from_tf([1], [1, 1])
    r = m.realization
    bad = dataclasses.replace(m, realization=type(r)(r.A, 2 * r.B, r.C))
    with pytest.raises(CrossCheckFailure):
        closed_loop_poles(bad)


def test_closed_loop_cross_check_on_random_configs(nameplate, rng):
    for _ in range(20):
        pp = nameplate.replace(L_g=float(rng.uniform(0.1, 0.6)))
        law = str(rng.choice(["droop", "droop-i"]))
        cp = ControlParams(law=law, T_q=float(rng.uniform(0.01, 0.1)),
                           k_iq=float(rng.uniform(0.5, 15)), P_st=float(rng.uniform(0, 0.8)))
        _, _, m = rap_model(pp, cp)
        closed_loop_poles(m, check=True)


def test_z_equals_closed_loop_rhp_count(nameplate, rng):
    for _ in range(15):
        pp = nameplate.replace(L_g=float(rng.uniform(0.1, 0.6)))
        law = str(rng.choice(["droop", "droop-i"]))
        ad = None
        if rng.uniform() < 0.3:
            ad = AdController.design_example(str(rng.choice(["inv-current", "grid-current",
                                                             "cap-voltage"])))
        cp = ControlParams(law=law, T_q=float(rng.uniform(0.01, 0.1)),
                           k_iq=float(rng.uniform(0.5, 15)))
        _, _, m = rap_model(pp, cp, ad)
        v = verdict(m, nyquist(m))
        assert v.Z == rhp_count(closed_loop_poles(m), m.stability_eps)


def test_verdict_format(nameplate):
    _, _, m = rap_model(nameplate, ControlParams(law="droop"))
    v = verdict(m, nyquist(m))
    text = v.format()
    assert "P=0" in text and "stable=true" in text
    assert nearest(m.ol_poles, -19.6).real == pytest.approx(-1 / 0.051)
