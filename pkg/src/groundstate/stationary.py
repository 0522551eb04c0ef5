"""Radial ground states, the singular solution and Fowler coordinates.

Profiles are integrated in the Fowler frame l_s,

    y1 = U(e^s) e^{m s},  y2 = dy1/ds,
    y1' = y2,  y2' = -A y2 + B y1 - g(y1, s; l_s),

which is equivalent to U'' + (n-1)/r U' + f(U, r) = 0 and keeps the slow
tail U ~ P1+ r^{-m} at unit scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares

from .errors import (
    DomainError,
    FitError,
    InconclusiveError,
    OrbitError,
    StiffSegmentError,
    UnsupportedSpectrumError,
)
from .expand import FowlerTailModel
from .exponents import ExponentTable, derive_exponents, fowler_constants
from .potentials import PotentialSpec, m_of_l, monomials_eval

POINTS_PER_DECADE = 32


class _AlphaInfinity:
    """Sentinel for the initial height of the singular solution."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "ALPHA_INFINITY"

    def __lt__(self, other):
        return False

    def __gt__(self, other):
        return other is not self

    def __reduce__(self):
        return (_AlphaInfinity, ())


ALPHA_INFINITY = _AlphaInfinity()


@dataclass(frozen=True)
class PhasePoint:
    """(y1, y2) at log-radius s in the Fowler frame ``frame``."""

    y1: float
    y2: float
    frame: float
    s: float


@dataclass
class GroundState:
    """Sampled radial profile U(r, alpha) with its Fowler trajectory in the l_s frame.

    ``alpha`` is :data:`ALPHA_INFINITY` for the singular solution.
    """

    alpha: object
    rGrid: np.ndarray
    U: np.ndarray
    dU: np.ndarray
    m: float
    decay: str | None = None
    tailA: float | None = None
    tailB: float | None = None
    fitDiagnostics: dict = field(default_factory=dict)
    frame: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def singular(self) -> bool:
        return self.alpha is ALPHA_INFINITY

    @property
    def s(self) -> np.ndarray:
        return np.log(self.rGrid)

    @property
    def y1(self) -> np.ndarray:
        return self.U * self.rGrid ** self.m

    @property
    def y2(self) -> np.ndarray:
        return (self.dU * self.rGrid + self.m * self.U) * self.rGrid ** self.m

    def to_dict(self) -> dict:
        return {"alpha": "infinity" if self.singular else float(self.alpha), "decay": self.decay,
                "tailA": self.tailA, "tailB": self.tailB, "fitDiagnostics": self.fitDiagnostics,
                "m": self.m, "frame": self.frame, "points": int(self.rGrid.size),
                "rMin": float(self.rGrid[0]), "rMax": float(self.rGrid[-1]), **self.meta}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "U", "dU", "U_r_m"])
            for row in zip(self.rGrid, self.U, self.dU, self.y1):
                w.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# coordinate maps

def to_fowler(r, U, dU, l: float):
    """(s, y1, y2) in frame l from physical (r, U, U')."""
    m = float(m_of_l(l))
    r = np.asarray(r, dtype=float)
    rm = r ** m
    return np.log(r), np.asarray(U) * rm, (np.asarray(dU) * r + m * np.asarray(U)) * rm


def to_physical(s, y1, y2, l: float):
    """(r, U, U') from Fowler coordinates in frame l."""
    m = float(m_of_l(l))
    s = np.asarray(s, dtype=float)
    r = np.exp(s)
    e = np.exp(-m * s)
    U = np.asarray(y1) * e
    dU = (np.asarray(y2) - m * np.asarray(y1)) * e / r
    return r, U, dU


def change_frame(s, y1, y2, l_from: float, l_to: float):
    """Fowler coordinates of the same profile in frame l_to.

    y1 picks up the factor exp((m' - m) s); y2 = dy1/ds also gains (m' - m) y1.
    """
    dm = float(m_of_l(l_to) - m_of_l(l_from))
    e = np.exp(dm * np.asarray(s, dtype=float))
    y1 = np.asarray(y1, dtype=float)
    return y1 * e, (np.asarray(y2) + dm * y1) * e


def fowler_map(obj, direction: str, l: float | None = None, l_to: float | None = None):
    """Dispatch for PhasePoint / GroundState / (r, U, dU) tuples.

    direction : {'toFowler', 'toPhysical', 'frameChange'}
    """
    if direction == "toFowler":
        if isinstance(obj, GroundState):
            frame = l if l is not None else obj.frame
            s, y1, y2 = to_fowler(obj.rGrid, obj.U, obj.dU, frame)
            return [PhasePoint(float(a), float(b), frame, float(c)) for a, b, c in zip(y1, y2, s)]
        r, U, dU = obj
        return to_fowler(r, U, dU, l)
    if direction == "toPhysical":
        if isinstance(obj, PhasePoint):
            r, U, dU = to_physical(obj.s, obj.y1, obj.y2, obj.frame)
            return float(r), float(U), float(dU)
        s, y1, y2 = obj
        return to_physical(s, y1, y2, l)
    if direction == "frameChange":
        if isinstance(obj, PhasePoint):
            a, b = change_frame(obj.s, obj.y1, obj.y2, obj.frame, l_to)
            return PhasePoint(float(a), float(b), l_to, obj.s)
        s, y1, y2 = obj
        return change_frame(s, y1, y2, l, l_to)
    raise ValueError(f"unknown direction {direction!r}")


# ---------------------------------------------------------------------------
# integration

def _rhs(spec, l: float, n: float):
    _, A, B = fowler_constants(n, l)

    def f(s, y):
        return [y[1], -A * y[1] + B * y[0] - float(spec.g(y[0], s, l))]
    return f


def _grid(s0: float, s1: float, ppd: int) -> np.ndarray:
    k = max(2, int(math.ceil((s1 - s0) / math.log(10.0) * ppd)) + 1)
    return np.linspace(s0, s1, k)


def series_start(spec: PotentialSpec, n: float, alpha: float, r0: float) -> tuple[float, float]:
    """(U(r0), U'(r0)) from the leading particular solution near r = 0.

    U = alpha - sum_i C_i r^{2+delta_i-eta_i},
    C_i = k0_i alpha^{q_i-1} / ((2+delta_i-eta_i)(n+delta_i-eta_i)).
    """
    U, dU = alpha, 0.0
    # perturbed potentials rescale f near the origin by a constant factor
    base = getattr(spec, "base", None)
    factor = float(spec.f(alpha, r0) / base.f(alpha, r0)) if base is not None else 1.0
    for t in spec.terms:
        e = 2.0 + t.delta - t.k.eta_eff
        C = factor * t.k.k0 * alpha ** (t.q - 1.0) / (e * (n + t.delta - t.k.eta_eff))
        U -= C * r0 ** e
        dU -= C * e * r0 ** (e - 1.0)
    return U, dU


@dataclass
class _Path:
    t: np.ndarray
    y: np.ndarray
    status: int
    t_event: float | None


def _solve(fun, s_span, y0, s_eval, tol, events=None, method="RK45") -> _Path:
    """Integrate one decade at a time, resetting atol to the current size of y.

    A single atol cannot serve both the tiny start y1 ~ alpha r0^m and the
    tail, where y2 -> 0 would otherwise force steps far below the rtol floor.
    """
    s_eval = np.asarray(s_eval, dtype=float)
    a, b = s_span
    seg = math.log(10.0)
    y = np.asarray(y0, dtype=float)
    ts, ys = [], []
    while True:
        hi = min(a + seg, b)
        if b - hi < 1e-3 * seg:
            hi = b
        last = hi == b
        mask = (s_eval >= a) & ((s_eval <= hi) if last else (s_eval < hi))
        want = s_eval[mask]
        t_eval = want if last else np.append(want, hi)
        atol = tol * 1e-2 * max(float(np.max(np.abs(y))), 1e-300)
        sol = solve_ivp(fun, (a, hi), y, method=method, t_eval=t_eval, rtol=tol, atol=atol, events=events)
        if sol.status == -1:
            rl = float(np.exp(sol.t[-1])) if sol.t.size else float(np.exp(a))
            raise StiffSegmentError(f"integration failed: {sol.message}", last_r=rl)
        t = np.asarray(sol.t, dtype=float)
        yy = np.asarray(sol.y, dtype=float).reshape(2, -1)
        keep = t < hi if not last else np.ones(t.size, bool)
        ts.append(t[keep])
        ys.append(yy[:, keep])
        if sol.status == 1:
            return _Path(np.concatenate(ts), np.concatenate(ys, axis=1), 1, float(sol.t_events[0][0]))
        if last:
            return _Path(np.concatenate(ts), np.concatenate(ys, axis=1), 0, None)
        y = yy[:, -1]
        a = hi


def shoot(spec: PotentialSpec, n: float, alpha: float, rMax: float = 1e3, tol: float = 1e-10,
          r0: float | None = None, points_per_decade: int = POINTS_PER_DECADE,
          rEval=None, method: str = "RK45") -> GroundState:
    """Regular radial solution with U(0) = alpha.

    Parameters
    ----------
    spec : PotentialSpec
    n : float
    alpha : float
        Initial height, > 0.
    rMax : float
    tol : float
        Relative tolerance of the integrator.
    r0 : float, optional
        Start radius, default 1e-6 max(1, alpha^{-(q-2)/2}).
    points_per_decade : int
    rEval : array, optional
        Radii at which to sample instead of the geometric grid.
    method : str
        Embedded Runge-Kutta pair: 'RK45' or 'DOP853' for tolerances below 1e-10.

    Returns
    -------
    GroundState
        decay is 'crossed-zero' if U hits 0, otherwise left for
        :func:`classify_decay`.
    """
    if not (isinstance(alpha, (int, float)) and alpha > 0):
        raise DomainError("alpha must be a positive number")
    q = min(t.q for t in spec.terms)
    if r0 is None:
        r0 = 1e-6 * max(1.0, alpha ** (-(q - 2.0) / 2.0))
    l = spec.l_s
    m = float(m_of_l(l))
    U0, dU0 = series_start(spec, n, alpha, r0)
    s0, y10, y20 = to_fowler(r0, U0, dU0, l)
    s1 = math.log(rMax)
    s_eval = np.log(np.asarray(rEval, dtype=float)) if rEval is not None else _grid(float(s0), s1, points_per_decade)
    s_eval = s_eval[(s_eval >= s0) & (s_eval <= s1)]

    def hit_zero(s, y):
        return y[0]
    hit_zero.terminal = True
    hit_zero.direction = -1

    sol = _solve(_rhs(spec, l, n), (float(s0), s1), [float(y10), float(y20)], s_eval, tol, [hit_zero], method)
    r, U, dU = to_physical(sol.t, sol.y[0], sol.y[1], l)
    crossed = sol.status == 1
    gs = GroundState(alpha=float(alpha), rGrid=r, U=U, dU=dU, m=m, frame=l,
                     decay="crossed-zero" if crossed else None,
                     meta={"r0": r0, "tol": tol, "n": n})
    if crossed:
        gs.meta["rZero"] = float(np.exp(sol.t_event))
    return gs


def singular_orbit(spec: PotentialSpec, n: float, sStart: float | None = None, sEnd: float = math.log(1e3),
                   eps: float | None = None, tol: float = 1e-10,
                   points_per_decade: int = POINTS_PER_DECADE, method: str = "RK45") -> GroundState:
    """Singular solution U(r, infinity), the orbit leaving P1- along its unstable manifold.

    In the l_u frame with z = e^{varpi s} the point (P1-, 0, 0) has the single
    unstable direction v = (v1, varpi v1, 1),
    v1 = -D(P1-) / (varpi^2 + A_u varpi + g'(P1-) - B_u),
    where D y^p is the leading e^{varpi s} correction of g. The start point is
    P1- + eps v1^{-1} v, so eps is the offset in y1. On the manifold the offset
    fixes sStart = ln(eps / v1) / varpi; a given ``sStart`` overrides this and
    places the start off the manifold, and the stable directions then pull the
    orbit back onto it. Integration runs in the l_u frame up to s = 0 and
    continues in the l_s frame.

    Parameters
    ----------
    eps : float, optional
        Signed offset in y1, default 1e-6 P1- sign(v1).

    Raises
    ------
    OrbitError
        If y1 leaves the positive cone.
    """
    table = derive_exponents(spec, n)
    l_u, l_s = spec.l_u, spec.l_s
    P = table.P1minus
    varpi = spec.varpi("-")
    lim = spec.limit_terms(l_u, "-")
    dg = float(monomials_eval(lim, P, 1))
    v1 = 0.0
    if varpi is not None:
        exp = spec.expansion(l_u, "-", varpi)
        D = sum(c * P ** p for (rate, p), c in exp.items() if abs(rate - varpi) < 1e-9)
        v1 = -D / (varpi ** 2 + table.A_u * varpi + dg - table.B_u)
    if varpi is not None and v1 != 0.0:
        if eps is None:
            eps = math.copysign(1e-6 * P, v1)
        z0 = eps / v1
        if sStart is None:
            if z0 <= 0:
                raise OrbitError("eps points against the unstable direction: flip its sign or pass sStart")
            sStart = math.log(z0) / varpi
        y0 = [P + eps, varpi * eps]
    else:
        sStart = -math.log(1e6) if sStart is None else sStart
        y0 = [P + (eps or 0.0), 0.0]
    pieces = []

    def leave(s, y):
        return y[0]
    leave.terminal = True
    leave.direction = -1

    s_mid = min(0.0, sEnd)
    if sStart < s_mid:
        grid = _grid(sStart, s_mid, points_per_decade)
        sol = _solve(_rhs(spec, l_u, n), (sStart, s_mid), y0, grid, tol, [leave], method)
        if sol.status == 1:
            raise OrbitError("orbit left the positive cone (y1 crossed 0): decrease eps or sStart")
        s_u, y1u, y2u = sol.t, sol.y[0], sol.y[1]
        pieces.append(to_physical(s_u, y1u, y2u, l_u))
        a, b = change_frame(s_u[-1], y1u[-1], y2u[-1], l_u, l_s)
        start, y_s = s_mid, [float(a), float(b)]
    else:
        start, y_s = sStart, list(change_frame(sStart, y0[0], y0[1], l_u, l_s))
    if sEnd > start:
        grid = _grid(start, sEnd, points_per_decade)
        sol = _solve(_rhs(spec, l_s, n), (start, sEnd), y_s, grid, tol, [leave], method)
        if sol.status == 1:
            raise OrbitError("orbit left the positive cone (y1 crossed 0): decrease eps or sStart")
        r, U, dU = to_physical(sol.t, sol.y[0], sol.y[1], l_s)
        if pieces:
            r, U, dU = r[1:], U[1:], dU[1:]
        pieces.append((r, U, dU))
    r = np.concatenate([p[0] for p in pieces])
    U = np.concatenate([p[1] for p in pieces])
    dU = np.concatenate([p[2] for p in pieces])
    if np.any(U <= 0):
        raise OrbitError("orbit left the positive cone: decrease eps or sStart")
    return GroundState(alpha=ALPHA_INFINITY, rGrid=r, U=U, dU=dU, m=float(m_of_l(l_s)), frame=l_s,
                       decay="singular", meta={"sStart": sStart, "v1": v1, "varpi": varpi,
                                               "m_u": float(m_of_l(l_u)), "n": n})


# ---------------------------------------------------------------------------
# decay and tails

def classify_decay(gs: GroundState, table: ExponentTable, drift: float = 0.01) -> str:
    """'fast', 'slow' or 'crossed-zero' from the last decade of the profile.

    Raises
    ------
    InconclusiveError
        Neither U r^{n-2} nor U r^{m} has settled over the last decade.
    """
    if gs.decay == "crossed-zero" or np.any(gs.U <= 0):
        return "crossed-zero"
    r = gs.rGrid
    last = r >= r[-1] / 10.0
    if np.count_nonzero(last) < 3:
        raise InconclusiveError("inconclusive: increase rMax")
    fast = gs.U[last] * r[last] ** (table.n - 2.0)
    slow = gs.U[last] * r[last] ** table.m_s
    if abs(fast[-1] / fast[0] - 1.0) < drift and np.ptp(fast) / abs(fast[-1]) < drift:
        return "fast"
    if abs(slow[-1] / table.P1plus - 1.0) < 0.05 and np.ptp(slow) / abs(slow[-1]) < drift:
        return "slow"
    raise InconclusiveError("inconclusive: increase rMax")


def _auto_window(s, signal, P, s_min):
    """Tail window where the deviation from the Psi-corrected fixed point is resolvable."""
    ok = (np.abs(signal) > 1e-8 * P) & (np.abs(signal) < 1e-2 * P) & (s >= s_min)
    idx = np.flatnonzero(ok)
    if idx.size < 6:
        raise FitError("tail window too short: increase rMax or lower the noise floor")
    # the longest contiguous run
    splits = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    run = max(splits, key=len)
    return float(np.exp(s[run[0]])), float(np.exp(s[run[-1]]))


def fit_tail(gs: GroundState, table: ExponentTable, spec: PotentialSpec, window=None,
             theta: float | None = None, model: FowlerTailModel | None = None):
    """Tail coefficients (A, B) with U r^m = P1+ + Psi(ln r) + A r^{lambda1} + B r^{lambda2} + ...

    A linear least-squares fit against {r^{lambda1}, r^{lambda2}} (or
    {ln r r^{lambda}, r^{lambda}} for a degenerate node) after removing P1+ + Psi
    seeds a nonlinear refinement with the full truncated series, which also
    carries the Q1 and Q2 terms generated by (A, B).

    Returns
    -------
    tailA, tailB : float
    diagnostics : dict
        rms (absolute, in y1 units), relative reproduction error, window,
        condition number of the linear basis.

    Raises
    ------
    FitError
        If the linear basis is ill-conditioned on the window (cond > 1e8).
    """
    if table.regime == "focus":
        raise UnsupportedSpectrumError("tail fit needs a real spectrum (node regime)")
    model = model or FowlerTailModel(table, spec, 0.0, theta)
    s_all, y1_all = gs.s, gs.y1
    P = table.P1plus
    psi = model.psi(s_all)
    signal = y1_all - P - psi
    zeta_min = 0.0
    if model.fs.has_zeta:
        zeta_min = math.log(30.0) / model.fs.gamma    # zeta <= 1/30 keeps the truncated Psi series accurate
    if window is None:
        window = _auto_window(s_all, signal, P, zeta_min)
    r1, r2 = window
    sel = (gs.rGrid >= r1) & (gs.rGrid <= r2)
    s, y = s_all[sel], y1_all[sel]
    if s.size < 4:
        raise FitError("window holds fewer than 4 samples: widen window")
    lam1, lam2 = float(table.lambda1), float(table.lambda2)
    if model.fs.degenerate:
        basis = np.column_stack([s * np.exp(lam1 * s), np.exp(lam1 * s)])
    else:
        basis = np.column_stack([np.exp(lam1 * s), np.exp(lam2 * s)])
    norms = np.linalg.norm(basis, axis=0)
    cond = float(np.linalg.cond(basis / norms))
    if cond > 1e8:
        raise FitError(f"ill-conditioned tail basis (cond {cond:.1e}): widen window")
    coef, *_ = np.linalg.lstsq(basis, signal[sel], rcond=None)

    def resid(p):
        return model.y1(s, p[0], p[1]) - y

    w = np.exp(-lam1 * s)   # weight residuals by the size of the a-term
    sol = least_squares(lambda p: resid(p) * w / w.max(), coef, method="lm", xtol=1e-15, ftol=1e-15,
                        gtol=1e-15, max_nfev=500)
    a, b = (float(x) for x in sol.x)
    res = resid(sol.x)
    rms = float(np.sqrt(np.mean(res ** 2)))
    dof = max(s.size - 2, 1)
    try:
        cov = np.linalg.inv(sol.jac.T @ sol.jac) * float(np.sum(sol.fun ** 2)) / dof
        stderr = [float(x) for x in np.sqrt(np.abs(np.diag(cov)))]
    except np.linalg.LinAlgError:
        stderr = [float("inf"), float("inf")]
    diag = {"rms": rms, "stderrA": stderr[0], "stderrB": stderr[1], "rms_over_P": rms / P, "max_relative": float(np.max(np.abs(res) / np.abs(y))),
            "window": [r1, r2], "cond": cond, "samples": int(s.size), "linear_guess": [float(c) for c in coef]}
    gs.tailA, gs.tailB, gs.fitDiagnostics = a, b, diag
    return a, b, diag
