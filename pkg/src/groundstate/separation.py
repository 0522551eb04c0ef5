"""Numerical checks of ordering and phase-plane confinement of ground states.

Strict inequalities are tested against a floor scaled by the local magnitude
of the compared quantities, so integration noise cannot flip a verdict.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InconclusiveError
from .exponents import ExponentTable, derive_exponents
from .potentials import PotentialSpec
from .stationary import ALPHA_INFINITY, GroundState, fit_tail, shoot, singular_orbit

GAP_FLOOR = 1e-10
SHOT = {"tol": 1e-12, "method": "DOP853"}


@dataclass
class SeparationReport:
    """Outcome of one separation property over a set of pairs or profiles.

    Attributes
    ----------
    prop : str
        Property name.
    pairs : list
        Compared (alpha1, alpha2) pairs; ``"infinity"`` stands for the singular orbit.
    minGap, minGapAt : float
        Smallest relative gap over all pairs and the radius where it occurs.
    violations : dict
        ``count`` and the ``worst`` witness.
    verdicts : dict
        Per pair or per check: pass, fail, degenerate pair or at bound.
    verdict : str
        Overall verdict.
    """

    prop: str
    pairs: list = field(default_factory=list)
    minGap: float = math.inf
    minGapAt: float | None = None
    violations: dict = field(default_factory=lambda: {"count": 0, "worst": None})
    verdicts: dict = field(default_factory=dict)
    verdict: str = "pass"
    details: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict, repr=False)

    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {"property": self.prop, "pairs": [[_label(a), _label(b)] for a, b in self.pairs],
                "minGap": self.minGap, "minGapAt": self.minGapAt, "violations": self.violations,
                "verdicts": self.verdicts, "verdict": self.verdict, "details": self.details}

    def to_csv(self, path) -> None:
        """Gap-versus-r curves, one column per pair."""
        keys = list(self.curves)
        if not keys:
            raise ValueError("report holds no curves")
        r = self.curves[keys[0]][0]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r"] + keys)
            for i, ri in enumerate(r):
                w.writerow([repr(float(ri))] + [repr(float(self.curves[k][1][i])) for k in keys])


def _label(a):
    return "infinity" if a is ALPHA_INFINITY else float(a)


def _key(a, b) -> str:
    return f"{_label(a)}<{_label(b)}"


def _overall(verdicts: dict) -> str:
    vals = set(verdicts.values())
    if "fail" in vals:
        return "fail"
    if vals <= {"degenerate pair"} and vals:
        return "degenerate pair"
    return "pass"


def _grid(rMin: float, rMax: float, ppd: int = 32) -> np.ndarray:
    k = int(math.ceil(math.log10(rMax / rMin) * ppd)) + 1
    return np.geomspace(rMin, rMax, k)


def _compare(rep: SeparationReport, r, lo, hi, a, b, floor: float) -> None:
    """Record hi > lo on r with the relative floor."""
    key = _key(a, b)
    rep.pairs.append((a, b))
    diff = hi - lo
    scale = np.maximum(np.abs(hi), np.abs(lo))
    rel = diff / scale
    rep.curves[key] = (r, diff)
    i = int(np.argmin(rel))
    if rel[i] < rep.minGap:
        rep.minGap, rep.minGapAt = float(rel[i]), float(r[i])
    bad = np.flatnonzero(rel <= floor)
    if bad.size:
        rep.violations["count"] += int(bad.size)
        j = bad[0]
        w = rep.violations["worst"]
        if w is None or rel[j] < w["relGap"]:
            rep.violations["worst"] = {"pair": key, "r": float(r[j]), "relGap": float(rel[j])}
        rep.verdicts[key] = "fail"
        rep.details.setdefault("firstCrossing", {})[key] = float(r[j])
    else:
        rep.verdicts[key] = "pass"


def verify_ordering(spec: PotentialSpec, n: float, alphas, rMax: float = 1e2, rMin: float = 1e-3,
                    gapFloor: float = GAP_FLOOR) -> SeparationReport:
    """Check U(r, alpha_i) < U(r, alpha_{i+1}) on a shared geometric grid.

    Equal heights give the verdict 'degenerate pair'. In the focus regime the
    profiles intersect and the first crossing radius is recorded per pair.
    """
    alphas = [float(a) for a in alphas]
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be non-decreasing")
    r = _grid(rMin, rMax)
    prof = {a: shoot(spec, n, a, rMax=rMax, rEval=r, **SHOT) for a in dict.fromkeys(alphas)}
    rep = SeparationReport("ordering")
    for a, b in zip(alphas, alphas[1:]):
        if a == b:
            rep.pairs.append((a, b))
            rep.verdicts[_key(a, b)] = "degenerate pair"
            rep.minGap = min(rep.minGap, 0.0)
            continue
        ua, ub = prof[a], prof[b]
        k = min(ua.U.size, ub.U.size)
        _compare(rep, r[:k], ua.U[:k], ub.U[:k], a, b, gapFloor)
        if k < r.size:
            rep.verdicts[_key(a, b)] = "fail"
            rep.details.setdefault("crossedZero", []).append(_key(a, b))
    rep.verdict = _overall(rep.verdicts)
    return rep


def verify_phase_bounds(gs: GroundState, table: ExponentTable, spec: PotentialSpec,
                        tol: float = 1e-9) -> SeparationReport:
    """Check y2 >= 0, 0 < y1 < P1+ and g(y1, s; l_s) < B y1 along the l_s trajectory.

    A trajectory sitting on the fixed point (the singular orbit of a pure
    power) is reported as 'at bound'.
    """
    P, B = table.P1plus, table.B
    s, y1, y2 = gs.s, gs.y1, gs.y2
    eps = tol * P
    g = np.asarray(spec.g(y1, s, spec.l_s), dtype=float)
    checks = {
        "y2>=0": y2 >= -eps,
        "0<y1<P": (y1 > 0) & (y1 < P + eps),
        "g<By1": g < B * y1 + eps * B,
    }
    rep = SeparationReport("phase bounds")
    for name, ok in checks.items():
        bad = np.flatnonzero(~ok)
        if bad.size:
            j = bad[0]
            rep.verdicts[name] = "fail"
            rep.violations["count"] += int(bad.size)
            if rep.violations["worst"] is None:
                rep.violations["worst"] = {"check": name, "r": float(gs.rGrid[j]), "y1": float(y1[j]),
                                           "y2": float(y2[j])}
        else:
            rep.verdicts[name] = "pass"
    rep.verdict = _overall(rep.verdicts)
    if rep.verdict == "pass" and np.all(np.abs(y1 - P) <= eps) and np.all(np.abs(y2) <= eps):
        rep.verdict = "at bound"
        rep.details["note"] = "trajectory is the fixed point (singular orbit), not a ground state"
    rep.minGap = float(np.min((P - y1) / P))
    rep.details["maxY1OverP"] = float(np.max(y1) / P)
    return rep


def verify_singular_majorant(spec: PotentialSpec, n: float, alphas, rRange=(1e-3, 1e2),
                             gapFloor: float = GAP_FLOOR, tol: float = 1e-9) -> SeparationReport:
    """Check U(r, alpha) < U(r, infinity) on rRange and that U(r, infinity) r^{m} is non-decreasing.

    Also records whether the gap U(r, infinity) - U(r, alpha) at the middle of
    rRange shrinks along the alpha grid.
    """
    rMin, rMax = rRange
    so = singular_orbit(spec, n, sEnd=math.log(rMax), **SHOT)
    sel = (so.rGrid >= rMin) & (so.rGrid <= rMax)
    r, U_inf = so.rGrid[sel], so.U[sel]
    rep = SeparationReport("singular majorant")
    mid = r.size // 2
    mids = []
    for a in sorted(float(x) for x in alphas):
        gs = shoot(spec, n, a, rMax=rMax, rEval=r, **SHOT)
        k = gs.U.size
        _compare(rep, r[:k], gs.U, U_inf[:k], a, ALPHA_INFINITY, gapFloor)
        mids.append(float(U_inf[mid] - gs.U[mid]) if k > mid else float("nan"))
    y = so.y1
    dif = np.diff(y)
    drops = np.flatnonzero(dif < -tol * max(abs(float(np.max(y))), 1.0))
    rep.verdicts["U(inf) r^m non-decreasing"] = "fail" if drops.size else "pass"
    if drops.size:
        rep.violations["count"] += int(drops.size)
        rep.details["firstDrop"] = float(so.rGrid[drops[0]])
    rep.details["midGaps"] = mids
    rep.details["gapShrinks"] = bool(all(x > y for x, y in zip(mids, mids[1:])))
    rep.verdict = _overall(rep.verdicts)
    return rep


def _weighted_distance(ua, ub, r, weight_exp, log_corrected):
    w = 1.0 + r ** weight_exp
    if log_corrected:
        w = w / np.log(2.0 + r)
    return float(np.max(w * np.abs(ub - ua)))


def verify_coefficient_monotonicity(spec: PotentialSpec, n: float, alphas, rMax: float = 1e2,
                                    rMin: float = 1e-3, halvings: int = 3, fits: dict | None = None,
                                    table: ExponentTable | None = None) -> SeparationReport:
    """Check that A(alpha) increases strictly and that GSs approach each other in the weighted norm.

    For every adjacent pair (alpha, beta) the distance
    sup_r (1 + r^{m+|lambda1|}) |U(r, beta_k) - U(r, alpha)|, beta_k = alpha + (beta - alpha) / 2^k,
    must decrease at every halving and drop at least twofold from k = 0 to
    k = ``halvings``. The degenerate node uses the log-corrected weight.

    Parameters
    ----------
    fits : dict, optional
        Precomputed ``{alpha: (tailA, stderrA)}``; shot and fitted when absent.

    Raises
    ------
    InconclusiveError
        If a coefficient gap does not exceed the combined fit uncertainty.
    """
    table = table or derive_exponents(spec, n)
    alphas = sorted(float(a) for a in alphas)
    if fits is None:
        fits = {}
        for a in alphas:
            gs = shoot(spec, n, a, rMax=1e3, **SHOT)
            A, _, diag = fit_tail(gs, table, spec)
            fits[a] = (A, diag["stderrA"])
    rep = SeparationReport("coefficient monotonicity")
    rep.details["tailA"] = {str(a): fits[a][0] for a in alphas}
    for a, b in zip(alphas, alphas[1:]):
        (Aa, ea), (Ab, eb) = fits[a], fits[b]
        gap = Ab - Aa
        key = _key(a, b)
        rep.pairs.append((a, b))
        rep.minGap = min(rep.minGap, gap)
        if abs(gap) <= 3.0 * (ea + eb):
            raise InconclusiveError(f"inconclusive: refine fits (gap {gap:.3e} vs uncertainty {ea + eb:.3e})")
        rep.verdicts[key] = "pass" if gap > 0 else "fail"
        if gap <= 0:
            rep.violations["count"] += 1
            rep.violations["worst"] = rep.violations["worst"] or {"pair": key, "gap": gap}
    # weighted distance under halving of beta - alpha
    r = _grid(rMin, rMax)
    expo = table.m_s + abs(float(np.real(table.lambda1)))
    logc = table.regime == "degenerate-node"
    dist = {}
    for a, b in zip(alphas, alphas[1:]):
        ua = shoot(spec, n, a, rMax=rMax, rEval=r, **SHOT).U
        ds = []
        for k in range(halvings + 1):
            bk = a + (b - a) / 2 ** k
            ub = shoot(spec, n, bk, rMax=rMax, rEval=r, **SHOT).U
            ds.append(_weighted_distance(ua, ub, r, expo, logc))
        key = f"distance {_key(a, b)}"
        ratios = [d1 / d0 for d0, d1 in zip(ds, ds[1:])]
        dist[key] = {"distances": ds, "ratios": ratios}
        ok = all(q < 1.0 for q in ratios) and ds[-1] <= 0.5 * ds[0]
        rep.verdicts[key] = "pass" if ok else "fail"
        if not ok:
            rep.violations["count"] += 1
    rep.details["weightedDistance"] = dist
    rep.details["weightExponent"] = expo
    rep.details["logCorrected"] = logc
    rep.verdict = _overall(rep.verdicts)
    return rep
