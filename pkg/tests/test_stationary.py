import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundstate.errors import DomainError, FitError, InconclusiveError, OrbitError
from groundstate.exponents import derive_exponents
from groundstate.potentials import KParams, PotentialSpec
from groundstate.stationary import (
    ALPHA_INFINITY,
    GroundState,
    PhasePoint,
    change_frame,
    classify_decay,
    fit_tail,
    fowler_map,
    shoot,
    singular_orbit,
    to_fowler,
    to_physical,
)

PURE = PotentialSpec.pure_power(4.0)
WEIGHTED = PotentialSpec.weighted_power(4.0, 0.0, KParams(1.0, 1.0, 1.0, 1.0))
T_PURE = derive_exponents(PURE, 13)
T_W = derive_exponents(WEIGHTED, 13)


def test_scaling_oracle_pure_power():
    r = np.geomspace(1e-3, 1e3, 61)
    big = shoot(PURE, 13, 4.0, rEval=r)
    small = shoot(PURE, 13, 1.0, rEval=4.0 * r, rMax=4e3)
    assert np.max(np.abs(big.U / (4.0 * small.U) - 1.0)) < 1e-6


def test_slow_decay_to_fixed_point():
    gs = shoot(WEIGHTED, 13, 1.0)
    assert classify_decay(gs, T_W) == "slow"
    assert abs(gs.y1[-1] / T_W.P1plus - 1.0) < 0.01


def test_small_alpha_stays_below_alpha():
    gs = shoot(PURE, 13, 1e-3)
    assert np.all(gs.U <= 1e-3 * (1 + 1e-9))   # up to the integration tolerance


def test_series_start_consistency():
    alpha, n = 2.0, 13
    gs = shoot(PURE, n, alpha, r0=1e-4, rMax=2e-2, tol=1e-13, method="DOP853")
    sel = gs.rGrid > 5e-3
    slope = (gs.U[sel] - alpha) / gs.rGrid[sel] ** 2
    assert np.allclose(slope, -alpha ** 3 / (2 * n), rtol=2e-3)


def test_nonpositive_alpha_rejected():
    with pytest.raises(DomainError):
        shoot(PURE, 13, 0.0)


def test_trajectory_leaves_origin_tangent_to_m_u():
    gs = shoot(WEIGHTED, 13, 1.0)
    y1, y2 = change_frame(gs.s[0], gs.y1[0], gs.y2[0], WEIGHTED.l_s, WEIGHTED.l_u)
    assert y2 / y1 == pytest.approx(T_W.m_u, rel=0.02)


def test_fowler_residual_along_profile():
    gs = shoot(PURE, 13, 1.0, points_per_decade=400, rMax=10.0)
    s, y1, y2 = gs.s, gs.y1, gs.y2
    dy2 = np.gradient(y2, s)
    res = dy2 + T_PURE.A * y2 - T_PURE.B * y1 + y1 ** 3
    assert np.max(np.abs(res[2:-2])) < 1e-3


def test_singular_orbit_pure_power_constant():
    so = singular_orbit(PURE, 13)
    assert np.max(np.abs(so.y1 - T_PURE.P1plus)) < 1e-8
    assert so.alpha is ALPHA_INFINITY and so.singular


def test_singular_orbit_weighted_limits():
    so = singular_orbit(WEIGHTED, 13)
    near = so.U[0] * so.rGrid[0] ** T_W.m_u
    assert abs(near / T_W.P1minus - 1.0) < 0.01
    assert abs(so.y1[-1] / T_W.P1plus - 1.0) < 0.01


def test_singular_orbit_flipped_offset_rejected():
    so = singular_orbit(WEIGHTED, 13)
    with pytest.raises(OrbitError):
        singular_orbit(WEIGHTED, 13, eps=-1e-6 * T_W.P1minus * np.sign(so.meta["v1"]))


def test_singular_orbit_frame_relation():
    so = singular_orbit(WEIGHTED, 13)
    s, y1u, y2u = to_fowler(so.rGrid, so.U, so.dU, WEIGHTED.l_u)
    r1, _ = change_frame(s, y1u, y2u, WEIGHTED.l_u, WEIGHTED.l_s)
    assert np.allclose(r1, y1u * np.exp((T_W.m_s - T_W.m_u) * s), rtol=1e-14)
    assert np.allclose(r1, so.y1, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(r=st.floats(1e-4, 1e4), U=st.floats(1e-6, 1e3), dU=st.floats(-1e3, 0.0), l=st.floats(2.2, 9.0))
def test_fowler_round_trip(r, U, dU, l):
    s, y1, y2 = to_fowler(r, U, dU, l)
    r2, U2, dU2 = to_physical(s, y1, y2, l)
    assert float(r2) == pytest.approx(r, rel=1e-13)
    assert float(U2) == pytest.approx(U, rel=1e-12)
    assert float(dU2) == pytest.approx(dU, rel=1e-10, abs=1e-10 * (abs(U) / r + 1e-300))


def test_fowler_map_dispatch():
    pt = PhasePoint(1.2, -0.3, 4.0, 0.7)
    r, U, dU = fowler_map(pt, "toPhysical")
    back = fowler_map((np.array(r), np.array(U), np.array(dU)), "toFowler", l=4.0)
    assert float(back[1]) == pytest.approx(1.2) and float(back[2]) == pytest.approx(-0.3)
    moved = fowler_map(pt, "frameChange", l_to=6.0)
    assert moved.frame == 6.0
    assert moved.y1 == pytest.approx(1.2 * math.exp((0.5 - 1.0) * 0.7))


def test_y2_is_derivative_of_y1():
    gs = shoot(PURE, 13, 1.0, rMax=10.0)
    errs = []
    for ppd in (100, 200):
        g = shoot(PURE, 13, 1.0, rMax=10.0, points_per_decade=ppd)
        d = np.gradient(g.y1, g.s, edge_order=2)
        errs.append(np.max(np.abs(d - g.y2)[5:-5]))
    assert errs[1] < errs[0] / 3.0
    assert gs.y2.size == gs.y1.size


def test_classify_fast_synthetic():
    r = np.geomspace(1.0, 1e3, 97)
    gs = GroundState(alpha=1.0, rGrid=r, U=r ** (2.0 - 13), dU=(2.0 - 13) * r ** (1.0 - 13), m=1.0)
    assert classify_decay(gs, T_PURE) == "fast"


def test_classify_crossed_zero():
    # below the Sobolev exponent every regular solution changes sign
    spec = PotentialSpec.pure_power(2.2)
    gs = shoot(spec, 13, 1.0, rMax=1e3)
    assert classify_decay(gs, T_PURE) == "crossed-zero"
    assert "rZero" in gs.meta


def test_classify_inconclusive():
    gs = shoot(PURE, 13, 1.0, rMax=2.0)
    with pytest.raises(InconclusiveError):
        classify_decay(gs, T_PURE)


def test_fit_tail_recovers_synthetic_coefficients():
    r = np.geomspace(5.0, 500.0, 80)
    a, b = -3.0, 7.0
    lam1, lam2 = T_PURE.lambda1, T_PURE.lambda2
    y1 = T_PURE.P1plus + a * r ** lam1 + b * r ** lam2
    U = y1 / r
    gs = GroundState(alpha=1.0, rGrid=r, U=U, dU=np.gradient(U, r), m=1.0)
    # the synthetic profile carries no nonlinear Q2 terms, so fit the linear part only
    A, B, diag = fit_tail(gs, T_PURE, PURE, window=(5.0, 500.0), theta=5.0)
    assert A == pytest.approx(a, abs=1e-8) and B == pytest.approx(b, abs=1e-8)


def test_fit_tail_singular_orbit_is_zero():
    so = singular_orbit(PURE, 13)
    so.U = so.U * (1 + 1e-12 * np.sin(so.rGrid))
    A, B, _ = fit_tail(so, T_PURE, PURE, window=(10.0, 200.0))
    assert abs(A) < 1e-5 and abs(B) < 1e-3


def test_fit_tail_monotone_in_alpha():
    As = []
    for alpha in (1.0, 2.0):
        gs = shoot(WEIGHTED, 13, alpha, tol=1e-12, method="DOP853")
        A, _, diag = fit_tail(gs, T_W, WEIGHTED)
        assert diag["rms_over_P"] < 1e-4
        As.append(A)
    assert As[0] < As[1] < 0


def test_fit_tail_ill_conditioned_window():
    gs = shoot(PURE, 13, 1.0, tol=1e-12, method="DOP853")
    with pytest.raises(FitError):
        fit_tail(gs, T_PURE, PURE, window=(20.0, 20.2))


def test_exports(tmp_path):
    gs = shoot(PURE, 13, 1.0, rMax=10.0)
    gs.to_csv(tmp_path / "p.csv")
    head = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert head == "r,U,dU,U_r_m"
    meta = json.loads(json.dumps(gs.to_dict()))
    assert meta["alpha"] == 1.0
    assert singular_orbit(PURE, 13).to_dict()["alpha"] == "infinity"
