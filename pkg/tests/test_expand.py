import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundstate.errors import DivergentTailError, FitError, UnsupportedSpectrumError
from groundstate.expand import (
    ExpSeries,
    FowlerTailModel,
    ParametricExpansion,
    StableSystem,
    apply_polynomial,
    expand_orbit,
    fit_free_coefficients,
    fowler_expand,
    ladder,
    resolve_forcing,
    residual_report,
    symbolic_residual,
)
from groundstate.exponents import derive_exponents, sigma_thresholds
from groundstate.potentials import KParams, PotentialSpec

RESONANT = StableSystem(np.diag([-1.0, -2.0]), {(2, 0): [0.0, 1.0]})
LOGISTIC = StableSystem(np.diag([-1.0, -2.0]), {(2, 0): [1.0, 1.0]})
WEIGHTED = PotentialSpec.weighted_power(4.0, 0.0, KParams(1.0, 1.0, 1.0, 1.0))


def single(system, chi, coefs):
    return ExpSeries(system, {chi: np.asarray(coefs, dtype=float)})


def test_term_algebra():
    s = single(RESONANT, (1, 0), [[1.0], [0.0]])
    q = single(RESONANT, (0, 1), [[1.0], [0.0]])
    prod = s.multiply(q)
    assert list(prod.terms) == [(1, 1)]
    assert RESONANT.rate((1, 1)) == 3.0
    sq = apply_polynomial({(2, 0): [0.0, 1.0]}, single(RESONANT, (1, 0), [[0.3], [0.0]]))
    assert sq.terms[(2, 0)][1, 0] == pytest.approx(0.09)
    secular = single(RESONANT, (1, 0), [[0.0, 1.0], [0.0, 0.0]])
    sq = secular.multiply(secular)
    assert np.allclose(sq.terms[(2, 0)][0], [0.0, 0.0, 1.0])


def test_truncation_drops_high_rates():
    s = ExpSeries(RESONANT, {(1, 0): [[1.0], [0.0]]}, theta=1.5)
    assert s.multiply(s).terms == {}
    assert s.remainderExponent == 2.0


def test_resolve_non_resonant_with_homogeneous_part():
    sys3 = StableSystem(np.diag([-1.0, -3.0]), {(2, 0): [0.0, 1.0]})
    a = 0.7
    out = resolve_forcing(sys3, single(sys3, (2, 0), [[0.0], [a * a]]), stage=1)
    assert out.terms[(2, 0)][1, 0] == pytest.approx(a * a, rel=1e-15)
    assert out.terms[(0, 1)][1, 0] == pytest.approx(-a * a, rel=1e-15)


def test_resolve_resonant_adds_secular_power():
    a = 0.7
    out = resolve_forcing(RESONANT, single(RESONANT, (2, 0), [[0.0], [a * a]]), stage=1)
    assert np.allclose(out.terms[(2, 0)][1], [0.0, a * a], atol=1e-16)
    assert (0, 1) not in out.terms


def test_resolve_zero_forcing():
    assert resolve_forcing(RESONANT, ExpSeries(RESONANT, {}), stage=1).terms == {}


def test_divergent_tail_rejected():
    with pytest.raises(DivergentTailError):
        resolve_forcing(RESONANT, single(RESONANT, (0, 1), [[0.0], [1.0]]), stage=2)


def test_ladder_example():
    assert ladder([1.0, 2.5]) == [1, 1]
    assert ladder([1.0, 1.5, 1.8]) == [1, 0, 0]
    assert ladder([1.0, 4.0, 5.0]) == [1, 3, 1]


def test_linear_system_exact():
    lin = StableSystem(np.array([[-1.0, 0.5], [0.0, -3.0]]))
    ser = expand_orbit(lin, [[0.4], [-0.2]], theta=10.0)
    t = np.linspace(0, 3, 7)
    x0 = ser(0.0)[:, 0]
    w, V = np.linalg.eig(lin.L)
    exact = (V @ np.diag(np.exp(np.outer(w, t)).T[0] * 0 + 1) @ np.linalg.solve(V, x0))
    for tk, col in zip(t, ser(t).T):
        ref = V @ (np.exp(w * tk) * np.linalg.solve(V, x0))
        assert np.allclose(col, ref, atol=1e-15)
    assert exact.shape == (2,)
    assert symbolic_residual(ser).is_zero(1e-15)


def test_resonant_orbit_exact():
    a, c = 0.6, -0.25
    ser = expand_orbit(RESONANT, [[a], [c]], theta=6.0)
    assert set(ser.terms) == {(1, 0), (0, 1), (2, 0)}
    assert ser.terms[(0, 1)][1, 0] == pytest.approx(c, abs=1e-15)
    assert np.allclose(ser.terms[(2, 0)][1], [0.0, a * a], atol=1e-15)
    assert ser.resonanceLog and ser.resonanceLog[0]["kind"] == "resonance"


def test_residual_cancels_below_theta():
    ser = expand_orbit(LOGISTIC, [[0.3], [0.2]], theta=5.0)
    rep = residual_report(ser)
    assert rep["max_relative_residual"] < 1e-12
    assert rep["first_surviving_rate"] > 5.0


def test_residual_reports_first_dropped_term():
    ser = expand_orbit(LOGISTIC, [[0.3], [0.2]], theta=1.5)
    res = symbolic_residual(ser)
    rates = sorted(LOGISTIC.rate(c) for c, a in res.terms.items() if np.max(np.abs(a)) > 0)
    assert rates[0] == 2.0


def test_r2_implies_constant_coefficients():
    sys_ = StableSystem(np.diag([-1.0, -math.sqrt(2.0)]), {(2, 0): [1.0, 1.0], (1, 1): [0.5, -1.0]})
    assert sys_.satisfies_R2()
    ser = expand_orbit(sys_, [[0.3], [0.4]], theta=6.0)
    assert ser.max_degree() == 0
    assert not RESONANT.satisfies_R2()


@settings(max_examples=20, deadline=None)
@given(d1=st.floats(-0.5, 0.5), d2=st.floats(-0.5, 0.5), d3=st.floats(-0.5, 0.5), bump=st.floats(0.01, 1.0))
def test_coefficient_causality(d1, d2, d3, bump):
    L = np.array([[-1.0, 0.0, 0.0], [0.3, -1.7, 0.0], [0.0, 0.2, -2.9]])
    N = {(2, 0, 0): [1.0, 0.5, -0.5], (1, 1, 0): [0.0, 1.0, 1.0], (0, 1, 1): [0.2, 0.0, 0.3]}
    sys_ = StableSystem(L, N)
    base = expand_orbit(sys_, [[d1], [d2], [d3]], theta=6.0)
    pert = expand_orbit(sys_, [[d1], [d2], [d3 + bump]], theta=6.0)
    for chi, arr in base.terms.items():
        if chi[2] == 0:
            assert np.array_equal(arr, pert.terms[chi])


def test_complex_spectrum_rejected():
    with pytest.raises(UnsupportedSpectrumError):
        StableSystem(np.array([[-1.0, 2.0], [-2.0, -1.0]]))
    with pytest.raises(UnsupportedSpectrumError):
        StableSystem(-np.eye(3))


def test_jordan_seed_is_secular():
    J = np.array([[-2.0, 1.0], [0.0, -2.0]])
    sys_ = StableSystem(J, {(2, 0): [0.0, 1.0]})
    assert sys_.blocks[0].jordan
    ser = expand_orbit(sys_, [[0.5, 0.3]], theta=4.0)
    assert ser.terms[(1,)].shape[-1] == 2
    assert residual_report(ser)["max_relative_residual"] < 1e-12


def test_parametric_matches_direct():
    sys_ = StableSystem(np.diag([-1.0, -2.5]), {(2, 0): [1.0, 1.0], (1, 1): [0.0, -0.7]})
    par = ParametricExpansion(sys_, 8.0)
    for d in ([0.3, -0.2], [-0.1, 0.6]):
        direct = expand_orbit(sys_, [[d[0]], [d[1]]], 8.0)
        fast = par.series([[d[0]], [d[1]]])
        t = np.linspace(0.5, 4, 5)
        assert np.allclose(direct(t), fast(t), rtol=1e-13, atol=1e-16)


def test_fit_recovers_synthetic_coefficients():
    d = [np.array([0.37]), np.array([-0.21])]
    ser = expand_orbit(LOGISTIC, d, 8.0)
    t = np.linspace(3.0, 8.0, 40)
    fitted, info = fit_free_coefficients(LOGISTIC, t, ser(t), 8.0)
    assert abs(fitted[0][0] - 0.37) < 1e-8 and abs(fitted[1][0] + 0.21) < 1e-8
    zero, _ = fit_free_coefficients(LOGISTIC, t, np.zeros((2, t.size)), 8.0, residual_floor=1.0)
    assert np.allclose(np.concatenate(zero), 0.0)


def test_fit_too_early_window_reported():
    d = [np.array([0.9]), np.array([0.5])]
    ser = expand_orbit(LOGISTIC, d, 30.0)
    t = np.linspace(0.0, 1.0, 30)
    with pytest.raises(FitError):
        fit_free_coefficients(LOGISTIC, t, ser(t), 2.0, residual_floor=1e-12)


def test_fit_first_order_agreement_with_projection():
    for eps in (1e-2, 1e-3):
        d = [np.array([eps]), np.array([eps])]
        ser = expand_orbit(LOGISTIC, d, 8.0)
        t = np.linspace(0.0, 6.0, 30)
        x = ser(t)
        fitted, _ = fit_free_coefficients(LOGISTIC, t, x, 8.0)
        projected = LOGISTIC.Vinv @ x[:, 0]
        assert abs(fitted[0][0] - projected[0]) < 10 * eps ** 2


def test_fowler_psi_independent_of_ab():
    t = derive_exponents(WEIGHTED, 13)
    e1 = fowler_expand(t, WEIGHTED, 0.1, 0.2)
    e2 = fowler_expand(t, WEIGHTED, -0.3, 0.05)
    assert e1.psi.keys() == e2.psi.keys()
    for k in e1.psi:
        assert np.array_equal(e1.psi[k], e2.psi[k])


def test_fowler_rate_windows():
    t = derive_exponents(WEIGHTED, 13)
    e = fowler_expand(t, WEIGHTED, 0.1, 0.2)
    l1, l2 = t.rates
    rates = e.block_rates
    for chi in e.q1Terms:
        assert l1 < np.dot(chi, rates) < l2
    zeta = e.block_names.index("zeta")
    for chi in e.psi:
        assert all(c == 0 for i, c in enumerate(chi) if i != zeta)
        assert np.dot(chi, rates) <= l1 + 1e-9
    # |lambda1| / gamma = 4: resonant secular term in Psi
    chi_r = tuple(4 if i == zeta else 0 for i in range(3))
    assert len(e.psi[chi_r]) == 2
    assert residual_report(e.series)["max_relative_residual"] < 1e-9


def test_fowler_psi_vanishes_when_gamma_is_fast():
    spec = PotentialSpec.weighted_power(4.0, 0.0, KParams(1.0, 1.0, 0.5, 6.5))
    t = derive_exponents(spec, 13)
    assert t.rates[0] < 6.5
    e = fowler_expand(t, spec, 0.1, 0.2)
    assert e.psi == {}


def test_fowler_pure_power_fixed_point():
    spec = PotentialSpec.pure_power(4.0)
    t = derive_exponents(spec, 13)
    e = fowler_expand(t, spec, 0.0, 0.0)
    s = np.linspace(0, 5, 6)
    assert np.allclose(e.y1(s), t.P1plus, rtol=0, atol=1e-15)
    assert e.psi == {} and e.q1Terms == {}


def test_fowler_degenerate_node_uses_jordan_seed():
    _, up = sigma_thresholds(13)
    spec = PotentialSpec.pure_power(up)
    t = derive_exponents(spec, 13)
    assert t.regime == "degenerate-node"
    e = fowler_expand(t, spec, 0.2, 0.1)
    assert e.degenerate
    s = np.linspace(2.0, 3.0, 3)
    lam = t.lambda1
    lead = t.P1plus + (0.2 * s + 0.1) * np.exp(lam * s)
    assert np.allclose(e.y1(s), lead, atol=5 * np.exp(2 * lam * s).max())


def test_fowler_focus_rejected():
    spec = PotentialSpec.pure_power(3.5)
    t = derive_exponents(spec, 13)
    with pytest.raises(UnsupportedSpectrumError):
        fowler_expand(t, spec, 0.1, 0.1)


def test_tail_model_matches_expansion():
    t = derive_exponents(WEIGHTED, 13)
    model = FowlerTailModel(t, WEIGHTED)
    s = np.linspace(3.0, 6.0, 4)
    assert np.allclose(model.y1(s, 0.1, 0.2), fowler_expand(t, WEIGHTED, 0.1, 0.2).y1(s), rtol=1e-13)
