import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundstate.errors import DomainError, FrameError, InvalidSpecError
from groundstate.exponents import derive_exponents, sigma_thresholds
from groundstate.potentials import (
    HypothesisLattice,
    KParams,
    PotentialSpec,
    bump,
    check_hypotheses,
    f_eval,
    g_eval,
    m_of_l,
    perturbed_potential,
)

WEIGHTED = PotentialSpec.weighted_power(4.0, 0.0, KParams(1.0, 1.0, 1.0, 1.0))
SMALL = HypothesisLattice(ny=60, ns=60)


def test_f_examples():
    assert f_eval(PotentialSpec.pure_power(4), 2.0, 5.0) == (8.0, 12.0)
    assert float(PotentialSpec.henon(4, 2).f(1.0, 3.0)) == pytest.approx(9.0)
    assert float(WEIGHTED.f(1.0, 1.0)) == pytest.approx(2.0)


def test_weight_blows_up_at_origin():
    with pytest.raises(DomainError):
        WEIGHTED.f(1.0, 0.0)


def test_invalid_specs():
    with pytest.raises(InvalidSpecError):
        PotentialSpec.pure_power(2.0)
    with pytest.raises(InvalidSpecError):
        PotentialSpec.henon(4.0, -2.0)
    with pytest.raises(InvalidSpecError):
        PotentialSpec.weighted_power(4.0, 0.0, KParams(1.0, 1.0, 2.5, 1.0))
    with pytest.raises(InvalidSpecError):
        PotentialSpec.two_power(4.0, 3.0, 0, 0, KParams(), KParams())


def test_g_examples():
    for q in (3.5, 4.0, 6.0):
        spec = PotentialSpec.pure_power(q)
        for s in (-3.0, 0.0, 2.5):
            assert float(spec.g(1.7, s, q)) == pytest.approx(1.7 ** (q - 1), rel=1e-13)
    henon = PotentialSpec.henon(4.0, 2.0)
    for y1, s in ((0.5, -2.0), (1.0, 0.3), (2.0, 4.0)):
        assert float(henon.g(y1, s, 3.0)) == pytest.approx(y1 ** 3, rel=1e-12)
    assert float(WEIGHTED.g(0.0, 1.3, WEIGHTED.l_s)) == 0.0


def test_limits_only_in_their_frames():
    with pytest.raises(FrameError):
        g_eval(WEIGHTED, 1.0, 0.0, 5.0, "limitPlusInf")
    lim = g_eval(WEIGHTED, 2.0, 0.0, WEIGHTED.l_s, "limitPlusInf")
    assert float(lim) == pytest.approx(8.0)
    far = g_eval(WEIGHTED, 2.0, 40.0, WEIGHTED.l_s, "value")
    assert float(far) == pytest.approx(8.0, rel=1e-12)
    near = g_eval(WEIGHTED, 2.0, -40.0, WEIGHTED.l_u, "value")
    assert float(near) == pytest.approx(float(g_eval(WEIGHTED, 2.0, 0.0, WEIGHTED.l_u, "limitMinusInf")), rel=1e-12)


def test_analytic_derivatives_match_differences():
    for spec in (WEIGHTED, PotentialSpec.henon(3.5, 1.0)):
        l = spec.l_s
        y, s, h = 1.3, 0.7, 1e-6
        dy = (spec.g(y + h, s, l) - spec.g(y - h, s, l)) / (2 * h)
        ds = (spec.g(y, s + h, l) - spec.g(y, s - h, l)) / (2 * h)
        assert float(spec.g_dy1(y, s, l)) == pytest.approx(float(dy), rel=1e-7)
        assert float(spec.g_ds(y, s, l)) == pytest.approx(float(ds), rel=1e-6, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(y1=st.floats(0.01, 5.0), s=st.floats(-6.0, 6.0), l=st.floats(2.3, 8.0))
def test_fowler_covariance(y1, s, l):
    m = m_of_l(l)
    for spec in (WEIGHTED, PotentialSpec.henon(4.0, 1.5)):
        lhs = float(spec.g(y1, s, l)) * math.exp(-(m + 2) * s)
        rhs = float(spec.f(y1 * math.exp(-m * s), math.exp(s)))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


def test_weighted_fixed_point_relations():
    t = derive_exponents(WEIGHTED, 13)
    lim = lambda y: g_eval(WEIGHTED, y, 0.0, WEIGHTED.l_s, "limitPlusInf")
    assert abs(float(lim(t.P1plus)) - t.B * t.P1plus) < 1e-10 * t.B * t.P1plus
    assert t.dg_P1plus == pytest.approx((t.qbar - 1) * t.B, rel=1e-10)


def test_hypotheses_pure_power_above_threshold():
    rep = check_hypotheses(PotentialSpec.pure_power(4.5), 13, SMALL)
    assert rep.passed()
    assert "scriptG identically zero" in rep.notes


def test_hypotheses_weighted_pass_with_g4_constants():
    rep = check_hypotheses(WEIGHTED, 13, SMALL)
    assert rep.passed()
    assert rep.metadata["gamma"] == pytest.approx(1.0)
    assert rep.metadata["c"] == pytest.approx(10 ** 1.5, rel=1e-10)


def test_two_power_without_weights_fails_k():
    spec = PotentialSpec.two_power(3.5, 4.0, 0.0, 0.0, KParams(), KParams())
    rep = check_hypotheses(spec, 13, SMALL)
    assert rep.verdicts["K"] == "fail"
    assert "condition_value" in rep.witnesses["K"]


def test_increasing_weight_fails_g3():
    spec = PotentialSpec.weighted_power(4.5, 0.0, KParams(1.0, -0.5, 0.0, 1.0))
    rep = check_hypotheses(spec, 13, SMALL)
    assert rep.verdicts["G3"] == "fail"
    assert "s" in rep.witnesses["G3"]


def test_focus_regime_fails_limit_hypotheses():
    rep = check_hypotheses(PotentialSpec.pure_power(3.5), 13, SMALL)
    assert rep.verdicts["G2"] == "fail"
    assert rep.witnesses["G2"]["reason"].startswith("frame parameter")


def test_bump_support():
    r = np.array([0.0, 0.5, 0.999, 1.0, 2.0])
    h = bump(r)
    assert h[0] == 1.0 and h[1] > 0 and h[3] == 0 and h[4] == 0


def test_perturbation_vanishes_outside_unit_ball():
    for sign in ("super", "sub"):
        pert = perturbed_potential(WEIGHTED, 1, sign)
        u = np.linspace(0.1, 3.0, 7)
        for r in (1.0, 1.5, 10.0):
            assert np.array_equal(pert.f(u, r), WEIGHTED.f(u, r))


def test_perturbation_ordering_and_amplitude():
    l = WEIGHTED.l_s
    sup = perturbed_potential(WEIGHTED, 1, "super")
    sub = perturbed_potential(WEIGHTED, 1, "sub")
    y = np.linspace(0.05, 6.0, 40)
    for s in np.linspace(-4, 3, 15):
        g = WEIGHTED.g(y, s, l)
        tol = 1e-13 * np.abs(g)
        assert np.all(sup.g(y, s, l) >= g - tol) and np.all(g + tol >= sub.g(y, s, l))
    diff = float(sup.f(1.0, 0.5) - WEIGHTED.f(1.0, 0.5))
    scriptG = float(WEIGHTED.f(1.0, 0.5) - WEIGHTED.f_limit(1.0, 0.5))
    assert diff == pytest.approx(float(bump(0.5)) * scriptG / 2, rel=1e-12)
    assert diff > 0
    amps = [float(perturbed_potential(WEIGHTED, k, "super").f(1.0, 0.5) - WEIGHTED.f(1.0, 0.5)) for k in (1, 10, 100)]
    assert amps[0] > amps[1] > amps[2] > 0


def test_perturbation_of_pure_power_keeps_a_minus():
    spec = PotentialSpec.pure_power(4.5)
    pert = perturbed_potential(spec, 1, "super", n=13)
    assert 0 < pert.mu <= 1
    assert float(pert.f(1.0, 0.2)) > float(spec.f(1.0, 0.2))
    assert pert.l_s == spec.l_s


def test_spec_round_trip():
    for spec in (WEIGHTED, PotentialSpec.henon(4, 2),
                 PotentialSpec.two_power(3.5, 5.0, -0.5, 0.0, KParams(1, 0.5, 0.5, 1), KParams())):
        assert PotentialSpec.from_dict(spec.to_dict()) == spec


def test_degenerate_threshold_is_in_table():
    lo, up = sigma_thresholds(13)
    t = derive_exponents(PotentialSpec.pure_power(up), 13)
    assert t.sigmaStarUpper == pytest.approx(up)
