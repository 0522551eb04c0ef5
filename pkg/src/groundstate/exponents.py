"""Critical exponents, Fowler constants and the spectrum at the positive fixed point."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, InvalidSpecError, SubcriticalError
from .potentials import PotentialSpec, m_of_l, monomials_eval

DEGENERATE_TOL = 1e-12


def two_star_of(n: float) -> float:
    """Sobolev exponent 2n / (n - 2)."""
    return 2.0 * n / (n - 2.0)


def fowler_constants(n: float, l: float) -> tuple[float, float, float]:
    """Return ``(m, A, B)`` with m = 2/(l-2), A = n-2-2m, B = m(n-2-m)."""
    m = float(m_of_l(l))
    return m, n - 2.0 - 2.0 * m, m * (n - 2.0 - m)


def sigma_star_closed_form(n: float) -> float:
    """Closed-form threshold as printed for the u**(q-1) problem (+inf for n <= 10)."""
    if n <= 10:
        return math.inf
    return ((n - 2.0) ** 2 - 4.0 * n + 8.0 * math.sqrt(n - 1.0)) / ((n - 2.0) * (n - 10.0))


def sigma_discriminant(n: float, l):
    """A(l)**2 - 4 (l - 2) B(l): the fixed-point discriminant of the homogeneous problem in frame l."""
    m = m_of_l(l)
    A = n - 2.0 - 2.0 * m
    B = m * (n - 2.0 - m)
    return A ** 2 - 4.0 * (2.0 / m) * B


def sigma_thresholds(n: float) -> tuple[float, float]:
    """Roots sigma_* < sigma^* in l of :func:`sigma_discriminant` (bisection).

    The discriminant is negative between the roots. For n <= 10 there is no
    root above 2* and both values are +inf.
    """
    # in x = m(l) the equation is 4x^2 - 4(n-4)x + (n-2)(n-10) = 0; bracket in x
    def h(x):
        return 4.0 * x * x - 4.0 * (n - 4.0) * x + (n - 2.0) * (n - 10.0)

    if n <= 10:
        return math.inf, math.inf
    xv = (n - 4.0) / 2.0  # vertex, h(xv) < 0
    x_low = brentq(h, 1e-300, xv, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    hi = xv + 1.0
    while h(hi) <= 0:
        hi *= 2.0
    x_high = brentq(h, xv, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return 2.0 + 2.0 / x_high, 2.0 + 2.0 / x_low


@dataclass(frozen=True)
class ExponentTable:
    """Derived scalars for a (potential, dimension) pair.

    ``A``, ``B``, ``m_s`` refer to the l_s frame (s -> +inf); ``A_u``, ``B_u``
    to the l_u frame (s -> -inf). ``lambda1``/``lambda2`` are complex in the
    focus regime.
    """

    n: float
    twoStar: float
    sigmaStarClosedForm: float
    sigmaStarLower: float
    sigmaStarUpper: float
    l_s: float
    l_u: float
    m_s: float
    m_u: float
    A: float
    B: float
    A_u: float
    B_u: float
    P1plus: float
    P1minus: float
    dg_P1plus: float
    dg_P1minus: float
    discriminant: float
    lambda1: complex | float
    lambda2: complex | float
    regime: str
    qbar: float

    @property
    def rates(self) -> tuple[float, float]:
        """(|lambda1|, |lambda2|) for real spectra."""
        if isinstance(self.lambda1, complex):
            raise ValueError("complex spectrum (focus regime)")
        return abs(self.lambda1), abs(self.lambda2)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("lambda1", "lambda2"):
            v = d[key]
            if isinstance(v, complex):
                d[key] = {"re": v.real, "im": v.imag}
        for key, v in list(d.items()):
            if isinstance(v, float) and math.isinf(v):
                d[key] = "inf"
        return d


def p1_fixed_point(gLimit: Callable, B: float, dg: Callable | None = None, side: str = "plus") -> float:
    """Unique y1 > 0 with gLimit(y1) = B y1.

    Parameters
    ----------
    gLimit : callable
        Autonomous limit y1 -> g(y1, +-inf; l).
    B : float
        B(l) of the frame in which ``gLimit`` is written. An ExponentTable may
        be passed instead; its ``B`` (side 'plus') or ``B_u`` (side 'minus') is used.
    dg : callable, optional
        Derivative of ``gLimit`` for the Newton polish (central differences otherwise).
    side : {'plus', 'minus'}

    Raises
    ------
    BracketError
        If gLimit(y) - B y has no sign change on (0, 1e12].
    """
    if isinstance(B, ExponentTable):
        B = B.B if side == "plus" else B.B_u

    def h(y):
        return float(gLimit(y)) - B * y

    lo, hi = 1e-8, 1.0
    if h(lo) >= 0:
        raise BracketError("fixed point not bracketed: g(y) >= B y near 0")
    while h(hi) <= 0:
        lo = hi
        hi *= 2.0
        if hi > 1e12:
            raise BracketError("fixed point not bracketed")
    y = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(3):
        if dg is not None:
            d = float(dg(y)) - B
        else:
            eps = 1e-6 * y
            d = (h(y + eps) - h(y - eps)) / (2 * eps)
        if d == 0:
            break
        step = h(y) / d
        y_new = y - step
        if abs(h(y_new)) <= abs(h(y)):
            y = y_new
        if abs(step) <= 1e-16 * y:
            break
    return y


def _roots(A: float, c: float):
    disc = A * A - 4.0 * c
    if abs(disc) <= DEGENERATE_TOL * max(1.0, A * A):
        return disc, -A / 2.0, -A / 2.0
    if disc > 0:
        sq = math.sqrt(disc)
        # stable quadratic formula
        q = -0.5 * (A + math.copysign(sq, A))
        r1, r2 = q, c / q if q != 0 else 0.0
        lam1, lam2 = max(r1, r2), min(r1, r2)
        return disc, lam1, lam2
    sq = math.sqrt(-disc)
    return disc, complex(-A / 2.0, sq / 2.0), complex(-A / 2.0, -sq / 2.0)


def lambda_roots(A: float, B: float, dg_at_P: float):
    """Roots of lambda**2 + A lambda + (dg(P1) - B) = 0 as ``(disc, lambda1, lambda2)``."""
    return _roots(A, dg_at_P - B)


def classify_regime(table_or_disc) -> str:
    """'focus' (disc < 0), 'degenerate-node' (|disc| <= 1e-12) or 'node'."""
    if isinstance(table_or_disc, ExponentTable):
        disc, scale = table_or_disc.discriminant, max(1.0, table_or_disc.A ** 2)
    else:
        disc, scale = float(table_or_disc), 1.0
    if abs(disc) <= DEGENERATE_TOL * scale:
        return "degenerate-node"
    return "focus" if disc < 0 else "node"


def derive_exponents(spec: PotentialSpec, n: float) -> ExponentTable:
    """All critical exponents and spectral quantities of ``spec`` in dimension ``n``.

    Raises
    ------
    InvalidSpecError
        If n <= 2.
    SubcriticalError
        If l_s <= 2*; the populated table is attached as ``exc.table``.
    """
    if not n > 2:
        raise InvalidSpecError("dimension n must exceed 2")
    l_s, l_u = spec.l_s, spec.l_u
    m_s, A, B = fowler_constants(n, l_s)
    m_u, A_u, B_u = fowler_constants(n, l_u)
    lim_p = spec.limit_terms(l_s, "+")
    lim_m = spec.limit_terms(l_u, "-")

    def fixed(lim, b):
        if b <= 0:
            return math.nan, math.nan
        P = p1_fixed_point(lambda y: monomials_eval(lim, y), b, lambda y: monomials_eval(lim, y, 1))
        return P, float(monomials_eval(lim, P, 1))

    P_plus, dg_plus = fixed(lim_p, B)
    P_minus, dg_minus = fixed(lim_m, B_u)
    if B > 0:
        disc, lam1, lam2 = lambda_roots(A, B, dg_plus)
        regime = classify_regime(disc / max(1.0, A * A))
        qbar = 2.0 + (dg_plus - B) / B
    else:
        disc, lam1, lam2, regime, qbar = math.nan, math.nan, math.nan, "focus", math.nan
    lo, up = sigma_thresholds(n)
    table = ExponentTable(
        n=float(n), twoStar=two_star_of(n), sigmaStarClosedForm=sigma_star_closed_form(n),
        sigmaStarLower=lo, sigmaStarUpper=up, l_s=l_s, l_u=l_u, m_s=m_s, m_u=m_u,
        A=A, B=B, A_u=A_u, B_u=B_u, P1plus=P_plus, P1minus=P_minus,
        dg_P1plus=dg_plus, dg_P1minus=dg_minus, discriminant=disc,
        lambda1=lam1, lambda2=lam2, regime=regime, qbar=qbar,
    )
    if l_s <= table.twoStar + 1e-12:
        raise SubcriticalError(f"l_s = {l_s} <= 2* = {table.twoStar}: outside the stability pipeline", table)
    return table
