import json

import numpy as np
import pytest

from groundstate.errors import BracketError, DomainError, UnsupportedSpectrumError
from groundstate.exponents import derive_exponents
from groundstate.parabolic import (
    NormSpec,
    RadialField,
    SchemeConfig,
    build_grid,
    evolve,
    glue_profiles,
    profile_on_grid,
    run_stability_experiment,
    run_weak_asymptotic_experiment,
    weighted_norm,
)
from groundstate.potentials import PotentialSpec
from groundstate.stationary import shoot

PURE = PotentialSpec.pure_power(4.0)
FOCUS = PotentialSpec.pure_power(3.5)
T_PURE = derive_exponents(PURE, 13)


def test_grid_node_count():
    g = build_grid(1e3, 10, 1e-3)
    assert g.size == 62 and g[0] == 0.0
    assert np.all(np.diff(g) > 0)


@pytest.mark.parametrize("args", [(1e-3, 10, 1e-3), (1e3, 7, 1e-3), (1e3, 10, 0.0)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(DomainError):
        build_grid(*args)


def test_norm_exact_cancellation():
    g = build_grid(1e3, 16)
    lam = 3.7
    assert weighted_norm(RadialField(g, 1.0 / (1.0 + g ** lam)), NormSpec(lam)) == pytest.approx(1.0)
    assert weighted_norm(RadialField(g, np.zeros(g.size)), NormSpec(lam)) == 0.0


def test_norm_lambda_zero_is_sup():
    g = build_grid(1e2, 16)
    v = np.sin(g) * np.exp(-g)
    assert weighted_norm(RadialField(g, v)) == np.max(np.abs(v))


def test_norm_tail_attained_at_large_r():
    g = build_grid(1e3, 16)
    m, lam1 = T_PURE.m_s, T_PURE.lambda1
    psi = (1.0 + g) ** (lam1 - m)
    val = weighted_norm(RadialField(g, psi), NormSpec(m + abs(lam1)))
    w = (1.0 + g ** (m + abs(lam1))) * psi
    # the weighted tail rises towards 1 from below
    tail = g > 10.0
    assert np.all(np.diff(w[tail]) > 0) and w[-1] > 0.99
    assert val == pytest.approx(1.0, rel=1e-12)


def test_norm_reference_must_share_grid():
    a = RadialField(build_grid(1e2, 16), np.zeros(build_grid(1e2, 16).size))
    b = RadialField(build_grid(1e2, 20), np.zeros(build_grid(1e2, 20).size))
    with pytest.raises(ValueError):
        weighted_norm(a, NormSpec(), b)


def test_null_solution_stays_zero():
    g = build_grid(1e3, 16)
    tr, fin = evolve(PURE, 13, RadialField(g, np.zeros(g.size)), 2.0)
    assert np.all(fin.values == 0.0)
    assert tr.termination == "completed" and tr.times[-1] == 2.0


def test_negative_datum_rejected():
    g = build_grid(1e2, 16)
    with pytest.raises(DomainError):
        evolve(PURE, 13, RadialField(g, -np.ones(g.size)), 1.0)


def test_steady_drift_is_second_order():
    drifts = []
    for ppd in (24, 48):
        g = build_grid(1e3, ppd)
        U = profile_on_grid(PURE, 13, 1.0, g)
        _, fin = evolve(PURE, 13, U, 2.0)
        drifts.append(np.max(np.abs(fin.values - U.values)) / np.max(U.values))
    assert drifts[1] < drifts[0] / 3.0


def test_well_balanced_profile_is_discrete_steady_state():
    g = build_grid(1e3, 24)
    U = profile_on_grid(PURE, 13, 1.0, g)
    _, fin = evolve(PURE, 13, U, 5.0, SchemeConfig(wellBalanced=U))
    assert np.max(np.abs(fin.values - U.values)) < 1e-10


def test_comparison_principle_on_ordered_data():
    g = build_grid(1e3, 24)
    lo = profile_on_grid(PURE, 13, 1.0, g)
    hi = RadialField(g, lo.values * (1.0 + 0.3 * np.exp(-g)))
    t = np.linspace(0, 3.0, 13)
    # a binding dtMax gives both runs the same steps
    sc = SchemeConfig(dtMax=0.02)
    tr_lo, _ = evolve(PURE, 13, lo, 3.0, sc, sampleTimes=t, keepFields=True)
    tr_hi, _ = evolve(PURE, 13, hi, 3.0, sc, sampleTimes=t, keepFields=True)
    for a, b in zip(tr_lo.fields, tr_hi.fields):
        assert np.all(a <= b + 1e-12 * np.abs(b))


def _singular_scaled(lam):
    P = T_PURE.P1plus

    def ev(r):
        r = np.asarray(r, dtype=float)
        return lam * P / r, -lam * P / r ** 2
    return ev


def test_glue_classification():
    g = build_grid(1e3, 24)
    gs = shoot(PURE, 13, 1.0, rMax=1e3, tol=1e-12, method="DOP853")
    fld, kind, R = glue_profiles(gs, _singular_scaled(0.8), g, bracket=(1e-2, 1e3))
    assert kind == "supersolution" and 1e-2 < R < 1e3
    assert fld.values[0] == 1.0
    _, kind, _ = glue_profiles(_singular_scaled(0.8), gs, g, bracket=(1e-2, 1e3))
    assert kind == "subsolution"
    _, kind, R = glue_profiles(gs, gs, g)
    assert kind == "neither" and R is None


def test_glue_without_junction_raises():
    g = build_grid(1e3, 16)
    a = shoot(PURE, 13, 1.0, tol=1e-12, method="DOP853")
    b = shoot(PURE, 13, 2.0, tol=1e-12, method="DOP853")
    with pytest.raises(BracketError):
        glue_profiles(a, b, g, bracket=(1e-2, 1e2))


def test_supersolution_decreases_monotonically():
    g = build_grid(1e3, 24)
    gs = shoot(PURE, 13, 1.0, rMax=1e3, tol=1e-12, method="DOP853")
    phi, kind, _ = glue_profiles(gs, _singular_scaled(0.8), g, bracket=(1e-2, 1e3))
    assert kind == "supersolution"
    U = profile_on_grid(PURE, 13, 1.0, g)
    tr, _ = evolve(PURE, 13, phi, 5.0, SchemeConfig(wellBalanced=U), sampleTimes=np.linspace(0, 5, 21))
    assert all(tr.nonincreasing)


def test_stability_sandwich_coarse():
    res = run_stability_experiment(PURE, 13, 1.0, 0.5, T=2.0, grid=build_grid(1e3, 24), samples=9)
    assert res.passed(), res.checks
    assert res.details["maxDistance"] <= res.details["zBar"]


def test_stability_rejects_zero_width():
    with pytest.raises(DomainError):
        run_stability_experiment(PURE, 13, 1.0, 0.0)


def test_stability_refuses_focus_regime():
    with pytest.raises(UnsupportedSpectrumError):
        run_stability_experiment(FOCUS, 13, 1.0, 0.5)


def test_blowup_of_scaled_focus_profile():
    g = build_grid(1e3, 24)
    U = profile_on_grid(FOCUS, 13, 1.0, g)
    tr, _ = evolve(FOCUS, 13, RadialField(g, 3.0 * U.values), 5.0)
    assert tr.termination == "blowup"
    assert 0.0 < tr.tStar < 5.0


def test_weak_experiment_sup_norm():
    res = run_weak_asymptotic_experiment(PURE, 13, 1.0, 0.0, T=5.0, samples=11)
    assert res.passed(), res.checks
    assert res.details["heightLower"] < 1.0 < res.details["heightUpper"]


def test_weak_experiment_rejects_coarse_order():
    limit = T_PURE.m_s + abs(T_PURE.lambda2)
    with pytest.raises(DomainError):
        run_weak_asymptotic_experiment(PURE, 13, 1.0, limit)


def test_trace_exports(tmp_path):
    g = build_grid(1e2, 16)
    U = profile_on_grid(PURE, 13, 1.0, g)
    tr, fin = evolve(PURE, 13, U, 1.0, norms={"dist": (NormSpec(2.0), U)})
    tr.to_csv(tmp_path / "trace.csv")
    fin.to_csv(tmp_path / "final.csv")
    assert (tmp_path / "trace.csv").read_text().splitlines()[0] == "t,umax,umin,dist"
    json.dumps(tr.to_dict())
