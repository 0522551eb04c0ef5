"""Nonlinearity families f(u, r), their Fowler images g(y1, s; l) and hypothesis checks.

Every family is a finite sum of weighted power terms

    f(u, r) = sum_i k_i(r) r**delta_i |u|**(q_i - 2) u,

with the weight k(r) = kInf + amp * r**(-eta) * (1 + r)**(eta - gamma).
Under the Fowler transformation r = e**s, y1 = u e**(m s) each term becomes
k_i(e**s) exp(e_i s) y1**(q_i - 1) with e_i = 2 + delta_i - m (q_i - 2).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import DomainError, FrameError, InvalidSpecError

RATE_TOL = 1e-9
_RATE_PROBE = 64.0  # rates above this never lead an expansion of interest


def gen_binom(a: float, j: int) -> float:
    """Generalized binomial coefficient a (a-1) ... (a-j+1) / j! for real a."""
    out = 1.0
    for i in range(j):
        out *= (a - i) / (i + 1)
    return out


def m_of_l(l):
    """Fowler exponent m(l) = 2 / (l - 2)."""
    if np.any(np.asarray(l) <= 2):
        raise InvalidSpecError("Fowler parameter l must exceed 2")
    return 2.0 / (np.asarray(l, dtype=float) - 2.0)


def l_of_m(m):
    """Inverse of :func:`m_of_l`."""
    return 2.0 + 2.0 / m


def _signed_power(u, p):
    # |u|**p * sign(u): odd extension of u**p
    u = np.asarray(u, dtype=float)
    return np.sign(u) * np.abs(u) ** p


@dataclass(frozen=True)
class KParams:
    """Weight k(r) = kInf + amp * r**(-eta) * (1 + r)**(eta - gamma).

    k ~ amp r**(-eta) near 0 (or kInf + amp when eta = 0) and
    k = kInf + amp r**(-gamma) + O(r**(-gamma-1)) at infinity.
    """

    kInf: float = 1.0
    amp: float = 0.0
    eta: float = 0.0
    gamma: float = 1.0

    @property
    def eta_eff(self) -> float:
        """Blow-up rate actually present at r = 0."""
        return self.eta if self.amp != 0.0 else 0.0

    @property
    def k0(self) -> float:
        """Coefficient of r**(-eta_eff) as r -> 0."""
        return self.amp if self.eta_eff > 0 else self.kInf + self.amp

    @property
    def constant(self) -> bool:
        return self.amp == 0.0

    def _corr_s(self, s):
        s = np.asarray(s, dtype=float)
        return self.amp * np.exp(-self.eta * s + (self.eta - self.gamma) * np.logaddexp(0.0, s))

    def at_s(self, s):
        """k(e**s), overflow-safe."""
        if self.amp == 0.0:
            return np.full(np.shape(s), self.kInf)
        return self.kInf + self._corr_s(s)

    def r_dk_at_s(self, s):
        """r k'(r) evaluated at r = e**s."""
        if self.amp == 0.0:
            return np.zeros(np.shape(s))
        s = np.asarray(s, dtype=float)
        return self._corr_s(s) * (-self.eta * expit(-s) - self.gamma * expit(s))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.amp == 0.0:
            return np.full(r.shape, self.kInf)
        if np.any(r <= 0):
            if self.eta > 0:
                raise DomainError("k(r) blows up at r = 0 when eta > 0")
            out = np.full(r.shape, self.kInf + self.amp)
            pos = r > 0
            out[pos] = self.kInf + self._corr_s(np.log(r[pos]))
            return out
        return self.at_s(np.log(r))

    def series_at_infinity(self, max_rate: float) -> list[tuple[float, float]]:
        """Terms (rate, coef) with k(e**s) = sum coef e**(-rate s) for s > 0."""
        out = [(0.0, self.kInf)]
        if self.amp != 0.0:
            j = 0
            while self.gamma + j <= max_rate + RATE_TOL:
                c = self.amp * gen_binom(self.eta - self.gamma, j)
                if c != 0.0:
                    out.append((self.gamma + j, c))
                j += 1
        return out

    def series_at_zero(self, max_rate: float) -> list[tuple[float, float]]:
        """Terms (rate, coef) with k(e**s) = sum coef e**(rate s) for s < 0 (rates may be negative)."""
        out = [(0.0, self.kInf)]
        if self.amp != 0.0:
            j = 0
            while j - self.eta <= max_rate + RATE_TOL:
                c = self.amp * gen_binom(self.eta - self.gamma, j)
                if c != 0.0:
                    out.append((j - self.eta, c))
                j += 1
        return out


@dataclass(frozen=True)
class PowerTerm:
    """One summand k(r) r**delta |u|**(q-2) u."""

    q: float
    delta: float = 0.0
    k: KParams = field(default_factory=KParams)

    def exponent(self, m):
        """Growth exponent e = 2 + delta - m (q - 2) of the Fowler image."""
        return 2.0 + self.delta - m * (self.q - 2.0)

    @property
    def m_plus(self) -> float:
        return (2.0 + self.delta) / (self.q - 2.0)

    @property
    def m_minus(self) -> float:
        return (2.0 + self.delta - self.k.eta_eff) / (self.q - 2.0)


@dataclass(frozen=True)
class PotentialSpec:
    """Parametric nonlinearity f(u, r) built from power terms.

    Use the constructors :meth:`pure_power`, :meth:`henon`,
    :meth:`weighted_power` and :meth:`two_power`.
    """

    family: str
    terms: tuple[PowerTerm, ...]

    def __post_init__(self):
        if not self.terms:
            raise InvalidSpecError("at least one power term required")
        for t in self.terms:
            if not t.q > 2:
                raise InvalidSpecError(f"q must exceed 2, got {t.q}")
            if not t.delta > -2:
                raise InvalidSpecError(f"delta must exceed -2, got {t.delta}")
            k = t.k
            if not k.kInf > 0:
                raise InvalidSpecError("kInf must be positive")
            if not k.gamma > 0:
                raise InvalidSpecError("gamma must be positive")
            if not 0 <= k.eta < 2 + t.delta:
                raise InvalidSpecError("need 0 <= eta < 2 + delta")
            if k.amp < 0 and (k.eta > 0 or k.kInf + k.amp <= 0):
                raise InvalidSpecError("negative amp only allowed with eta = 0 and kInf + amp > 0")
        if self.family == "TwoPower" and not self.terms[0].q < self.terms[1].q:
            raise InvalidSpecError("TwoPower requires q1 < q2")

    # constructors -----------------------------------------------------
    @classmethod
    def pure_power(cls, q: float) -> "PotentialSpec":
        return cls("PurePower", (PowerTerm(q),))

    @classmethod
    def henon(cls, q: float, delta: float) -> "PotentialSpec":
        return cls("Henon", (PowerTerm(q, delta),))

    @classmethod
    def weighted_power(cls, q: float, delta: float, k: KParams) -> "PotentialSpec":
        return cls("WeightedPower", (PowerTerm(q, delta, k),))

    @classmethod
    def two_power(cls, q1, q2, delta1, delta2, k1: KParams, k2: KParams) -> "PotentialSpec":
        return cls("TwoPower", (PowerTerm(q1, delta1, k1), PowerTerm(q2, delta2, k2)))

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        """Build from a config table (keys: family, q, delta, kInf, amp, eta, gamma, ...)."""
        fam = d.get("family")
        try:
            if fam == "PurePower":
                return cls.pure_power(float(d["q"]))
            if fam == "Henon":
                return cls.henon(float(d["q"]), float(d["delta"]))
            if fam == "WeightedPower":
                return cls.weighted_power(float(d["q"]), float(d.get("delta", 0.0)), _k_from(d, ""))
            if fam == "TwoPower":
                return cls.two_power(float(d["q1"]), float(d["q2"]), float(d.get("delta1", 0.0)),
                                     float(d.get("delta2", 0.0)), _k_from(d, "1"), _k_from(d, "2"))
        except KeyError as exc:
            raise InvalidSpecError(f"missing potential key {exc}") from None
        raise InvalidSpecError(f"unknown potential family {fam!r}")

    def to_dict(self) -> dict:
        out = {"family": self.family}
        suffixes = [""] if len(self.terms) == 1 else ["1", "2"]
        for sfx, t in zip(suffixes, self.terms):
            out[f"q{sfx}"] = t.q
            out[f"delta{sfx}"] = t.delta
            for name in ("kInf", "amp", "eta", "gamma"):
                out[f"{name}{sfx}"] = getattr(t.k, name)
        return out

    # frames -------------------------------------------------------------
    @property
    def m_s(self) -> float:
        return max(t.m_plus for t in self.terms)

    @property
    def m_u(self) -> float:
        return min(t.m_minus for t in self.terms)

    @property
    def l_s(self) -> float:
        return float(l_of_m(self.m_s))

    @property
    def l_u(self) -> float:
        return float(l_of_m(self.m_u))

    @property
    def eta_max(self) -> float:
        return max(t.k.eta_eff for t in self.terms)

    # physical evaluation -----------------------------------------------
    def f(self, u, r):
        """f(u, r); odd in u."""
        u = np.asarray(u, dtype=float)
        r = np.asarray(r, dtype=float)
        total = np.zeros(np.broadcast(u, r).shape)
        for t in self.terms:
            total = total + t.k(r) * _rpow(r, t.delta) * _signed_power(u, t.q - 1.0)
        return total

    def dfdu(self, u, r):
        u = np.asarray(u, dtype=float)
        r = np.asarray(r, dtype=float)
        total = np.zeros(np.broadcast(u, r).shape)
        for t in self.terms:
            total = total + t.k(r) * _rpow(r, t.delta) * (t.q - 1.0) * np.abs(u) ** (t.q - 2.0)
        return total

    def f_limit(self, u, r):
        """Physical image of the s -> +inf autonomous limit (dominant terms, k -> kInf)."""
        total = np.zeros(np.broadcast(np.asarray(u), np.asarray(r)).shape)
        for t in self.terms:
            if abs(t.m_plus - self.m_s) < RATE_TOL:
                total = total + t.k.kInf * _rpow(r, t.delta) * _signed_power(u, t.q - 1.0)
        return total

    # Fowler evaluation ---------------------------------------------------
    def g(self, y1, s, l):
        """g(y1, s; l) = f(y1 e**(-m s), e**s) e**((m+2) s)."""
        m = m_of_l(l)
        y1 = np.asarray(y1, dtype=float)
        s = np.asarray(s, dtype=float)
        total = np.zeros(np.broadcast(y1, s).shape)
        for t in self.terms:
            total = total + t.k.at_s(s) * np.exp(t.exponent(m) * s) * _signed_power(y1, t.q - 1.0)
        return total

    def g_dy1(self, y1, s, l):
        m = m_of_l(l)
        y1 = np.asarray(y1, dtype=float)
        s = np.asarray(s, dtype=float)
        total = np.zeros(np.broadcast(y1, s).shape)
        for t in self.terms:
            total = total + (t.k.at_s(s) * np.exp(t.exponent(m) * s)
                             * (t.q - 1.0) * np.abs(y1) ** (t.q - 2.0))
        return total

    def g_ds(self, y1, s, l):
        m = m_of_l(l)
        y1 = np.asarray(y1, dtype=float)
        s = np.asarray(s, dtype=float)
        total = np.zeros(np.broadcast(y1, s).shape)
        for t in self.terms:
            e = t.exponent(m)
            total = total + (np.exp(e * s) * _signed_power(y1, t.q - 1.0)
                             * (t.k.r_dk_at_s(s) + e * t.k.at_s(s)))
        return total

    def expansion(self, l: float, side: str, max_rate: float = 0.0) -> dict[tuple[float, float], float]:
        """Exponential expansion of g(., s; l) as s -> +inf (side '+') or -inf (side '-').

        Returns ``{(rate, power): coef}`` with
        g = sum coef exp(-rate s) y1**power on side '+' and
        g = sum coef exp(+rate s) y1**power on side '-'.
        Negative rates mean g blows up on that side. Terms with rate above
        ``max_rate`` are dropped, except that negative rates are always kept.
        """
        m = float(m_of_l(l))
        acc: dict[tuple[float, float], float] = {}
        for t in self.terms:
            e = t.exponent(m)
            if side == "+":
                pieces = [(-e + rate, c) for rate, c in t.k.series_at_infinity(max_rate + e)]
            elif side == "-":
                pieces = [(e + rate, c) for rate, c in t.k.series_at_zero(max_rate - e)]
            else:
                raise ValueError("side must be '+' or '-'")
            for rate, c in pieces:
                if rate > max_rate + RATE_TOL:
                    continue
                key = (_snap(rate), t.q - 1.0)
                acc[key] = acc.get(key, 0.0) + c
        return {k: v for k, v in acc.items() if v != 0.0}

    def limit_terms(self, l: float, side: str) -> list[tuple[float, float]]:
        """Monomials (coef, power) of the autonomous limit g(y1, +-inf; l).

        Raises
        ------
        FrameError
            If g blows up or vanishes identically on that side in frame ``l``.
        """
        exp = self.expansion(l, side, 0.0)
        if any(rate < -RATE_TOL for rate, _ in exp):
            raise FrameError(f"non-convergent frame: g blows up as s -> {side}inf at l={l}")
        lim = [(c, p) for (rate, p), c in exp.items() if abs(rate) <= RATE_TOL]
        if not lim:
            raise FrameError(f"non-convergent frame: limit as s -> {side}inf vanishes at l={l}")
        return sorted(lim, key=lambda cp: cp[1])

    def varpi(self, side: str) -> float | None:
        """Smallest positive rate of convergence of g to its limit on the given side."""
        return _varpi(self, side)

    def _varpi_uncached(self, side: str) -> float | None:
        l = self.l_s if side == "+" else self.l_u
        exp = self.expansion(l, side, _RATE_PROBE)
        rates = [rate for rate, _ in exp if rate > RATE_TOL]
        return min(rates) if rates else None

    def scriptG_is_zero(self) -> bool:
        """True when g(y1, s; l_s) does not depend on s."""
        return self.varpi("+") is None

    def g_eval(self, y1, s, l, mode: str = "value"):
        """Dispatch on ``mode`` in {value, dy1, ds, limitMinusInf, limitPlusInf, scriptG}."""
        if mode == "value":
            return self.g(y1, s, l)
        if mode == "dy1":
            return self.g_dy1(y1, s, l)
        if mode == "ds":
            return self.g_ds(y1, s, l)
        if mode in ("limitMinusInf", "limitPlusInf"):
            ref = self.l_u if mode == "limitMinusInf" else self.l_s
            if abs(l - ref) > 1e-9 * max(1.0, abs(ref)):
                raise FrameError(f"non-convergent frame: {mode} requires l={ref}, got {l}")
            return monomials_eval(self.limit_terms(ref, "-" if mode == "limitMinusInf" else "+"), y1)
        if mode == "scriptG":
            if abs(l - self.l_s) > 1e-9 * max(1.0, self.l_s):
                raise FrameError("scriptG is defined in the l_s frame")
            return self.g(y1, s, l) - monomials_eval(self.limit_terms(self.l_s, "+"), y1)
        raise ValueError(f"unknown mode {mode!r}")


@functools.lru_cache(maxsize=256)
def _varpi(spec: PotentialSpec, side: str) -> float | None:
    return spec._varpi_uncached(side)


def _k_from(d: dict, sfx: str) -> KParams:
    return KParams(kInf=float(d.get(f"kInf{sfx}", 1.0)), amp=float(d.get(f"amp{sfx}", 0.0)),
                   eta=float(d.get(f"eta{sfx}", 0.0)), gamma=float(d.get(f"gamma{sfx}", 1.0)))


def _rpow(r, p):
    if p == 0:
        return np.ones(np.shape(r))
    return np.asarray(r, dtype=float) ** p


def _snap(x: float) -> float:
    # merge rates that differ by rounding only
    r = round(x)
    return float(r) if abs(x - r) < RATE_TOL else float(x)


def monomials_eval(terms, y, derivative: int = 0):
    """Evaluate sum coef * y**power (or its derivative of order 0, 1 or 2)."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape)
    for c, p in terms:
        if derivative == 0:
            out = out + c * _signed_power(y, p)
        elif derivative == 1:
            out = out + c * p * np.abs(y) ** (p - 1.0)
        elif derivative == 2:
            out = out + c * p * (p - 1.0) * _signed_power(y, p - 2.0)
        else:
            raise ValueError("derivative order must be 0, 1 or 2")
    return out


def f_eval(spec, u, r):
    """Return ``(f(u, r), df/du(u, r))``.

    Raises
    ------
    DomainError
        For r = 0 when the weight blows up there, or negative u.
    """
    if np.any(np.asarray(u) < 0):
        raise DomainError("u must be nonnegative")
    if np.any(np.asarray(r) < 0):
        raise DomainError("r must be nonnegative")
    return spec.f(u, r), spec.dfdu(u, r)


def g_eval(spec, y1, s, l, mode: str = "value"):
    """Fowler image of ``spec``; see :meth:`PotentialSpec.g_eval`."""
    return spec.g_eval(y1, s, l, mode)


# perturbed potentials --------------------------------------------------------

def bump(r):
    """Smooth cutoff h(r) = exp(1 - 1/(1 - r**2)) on [0, 1), zero beyond."""
    r = np.asarray(r, dtype=float)
    out = np.zeros(r.shape)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class PerturbedPotential:
    """f perturbed inside the unit ball so that its ground states are strict super/subsolutions.

    When the s-dependent part G = g - g(., +inf) is nonzero the perturbation is
    sign * h(r) G / (2k); otherwise f is multiplied by 1 + sign * mu h(r) / k.
    Frames, limits and exponents are those of ``base`` (h vanishes for r >= 1).
    """

    base: PotentialSpec
    k: int
    sign: int
    mu: float = 1.0

    @property
    def family(self):
        return self.base.family

    @property
    def terms(self):
        return self.base.terms

    def __getattr__(self, name):
        # frames, expansions and limits are inherited unchanged
        if name == "base":
            raise AttributeError(name)
        return getattr(self.base, name)

    def _weight(self, r):
        return bump(r)

    def f(self, u, r):
        base = self.base.f(u, r)
        h = bump(r)
        if self.base.scriptG_is_zero():
            return base * (1.0 + self.sign * self.mu * h / self.k)
        return base + self.sign * h / (2.0 * self.k) * (base - self.base.f_limit(u, r))

    def dfdu(self, u, r):
        base = self.base.dfdu(u, r)
        h = bump(r)
        if self.base.scriptG_is_zero():
            return base * (1.0 + self.sign * self.mu * h / self.k)
        lim = _limit_dfdu(self.base, u, r)
        return base + self.sign * h / (2.0 * self.k) * (base - lim)

    def g(self, y1, s, l):
        m = m_of_l(l)
        s = np.asarray(s, dtype=float)
        return self.f(np.asarray(y1) * np.exp(-m * s), np.exp(s)) * np.exp((m + 2.0) * s)

    def g_dy1(self, y1, s, l):
        m = m_of_l(l)
        s = np.asarray(s, dtype=float)
        return self.dfdu(np.asarray(y1) * np.exp(-m * s), np.exp(s)) * np.exp(2.0 * s)


def _limit_dfdu(spec: PotentialSpec, u, r):
    total = np.zeros(np.broadcast(np.asarray(u), np.asarray(r)).shape)
    for t in spec.terms:
        if abs(t.m_plus - spec.m_s) < RATE_TOL:
            total = total + t.k.kInf * _rpow(r, t.delta) * (t.q - 1.0) * np.abs(u) ** (t.q - 2.0)
    return total


def perturbed_potential(spec: PotentialSpec, k: int, sign: str, n: int | None = None,
                        lattice=None) -> PerturbedPotential:
    """Perturbed potential with ground states that are strict super- or subsolutions.

    Parameters
    ----------
    spec : PotentialSpec
    k : int
        Perturbation index, amplitude scales like 1/k.
    sign : {'super', 'sub'}
    n : int, optional
        Space dimension; required when G vanishes identically, since mu is
        then halved from 1 until A- passes on ``lattice``.
    lattice : HypothesisLattice, optional
    """
    if k < 1:
        raise InvalidSpecError("k must be a positive integer")
    sgn = {"super": 1, "sub": -1}[sign]
    if not spec.scriptG_is_zero():
        return PerturbedPotential(spec, int(k), sgn)
    if n is None:
        raise InvalidSpecError("dimension n is needed to tune mu when G vanishes identically")
    lattice = lattice or HypothesisLattice(ny=60, ns=80)
    mu = 1.0
    for _ in range(40):
        ok = all(_check_a_minus(PerturbedPotential(spec, int(k), s2, mu), n, lattice)[0] for s2 in (1, -1))
        if ok:
            break
        mu *= 0.5
    return PerturbedPotential(spec, int(k), sgn, mu)


# hypothesis checks -------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisLattice:
    """Test lattice in (y1, s): y1 in (0, ymax_factor * P1], s in [-S, S]."""

    ny: int = 200
    ns: int = 200
    S: float = 20.0
    ymax_factor: float = 2.0


@dataclass
class HypothesisReport:
    verdicts: dict[str, str]
    witnesses: dict[str, dict]
    notes: list[str]
    metadata: dict

    def passed(self, *names: str) -> bool:
        names = names or tuple(self.verdicts)
        return all(self.verdicts[n] == "pass" for n in names)

    def failed(self) -> list[str]:
        return [k for k, v in self.verdicts.items() if v == "fail"]

    def to_dict(self) -> dict:
        return {"verdicts": dict(self.verdicts), "witnesses": self.witnesses,
                "notes": list(self.notes), "metadata": self.metadata}


def _g0_on(gfun: Callable, dgfun: Callable, y: np.ndarray, s_values, scale: float):
    """G0 falsification: g(0)=0, dg(0)=0, dg > 0 strictly increasing for y > 0."""
    for s in s_values:
        g0 = float(gfun(np.array([0.0]), s)[0])
        dg0 = float(dgfun(np.array([0.0]), s)[0])
        if abs(g0) > 1e-14 * scale or abs(dg0) > 1e-14 * scale:
            return False, {"s": float(s), "y1": 0.0, "reason": "g(0) or dg(0) nonzero"}
        d = dgfun(y, s)
        if np.any(d <= 0):
            i = int(np.argmax(d <= 0))
            return False, {"s": float(s), "y1": float(y[i]), "reason": "dg/dy1 not positive"}
        inc = np.diff(d)
        if np.any(inc <= 0):
            i = int(np.argmax(inc <= 0))
            return False, {"s": float(s), "y1": float(y[i]), "reason": "dg/dy1 not increasing"}
    return True, {}


def _check_a_minus(pot, n: int, lattice: HypothesisLattice, ymax: float = 2.0):
    """A-: G(y1, s; 2*) = int_0^y1 g(a, s; 2*) da decreasing in s, strictly somewhere."""
    from .exponents import two_star_of  # local import, avoids a cycle

    l2 = two_star_of(n)
    y = np.linspace(ymax / lattice.ny, ymax, lattice.ny)
    s = np.linspace(-lattice.S / 4, lattice.S / 4, lattice.ns)
    nodes, weights = np.polynomial.legendre.leggauss(24)
    a = 0.5 * (nodes[:, None] + 1.0) * y[None, :]                  # (24, ny)
    G = np.empty((lattice.ns, lattice.ny))
    for j, sj in enumerate(s):
        G[j] = 0.5 * y * np.sum(weights[:, None] * pot.g(a, sj, l2), axis=0)
    dG = np.diff(G, axis=0)
    tol = 1e-12 * np.maximum(np.abs(G[:-1]), 1e-300)
    bad = dG > tol
    if np.any(bad):
        j, i = np.argwhere(bad)[0]
        return False, {"s": float(s[j]), "y1": float(y[i]), "increase": float(dG[j, i])}
    if not np.any(dG < -tol):
        return False, {"reason": "G constant in s (not strictly decreasing anywhere)"}
    return True, {}


def check_hypotheses(spec: PotentialSpec, n: int, lattice: HypothesisLattice | None = None) -> HypothesisReport:
    """Lattice falsification of G0-G4, K and A-.

    Parameters
    ----------
    spec : PotentialSpec
    n : int
        Space dimension.
    lattice : HypothesisLattice, optional
        Defaults to 200 x 200 points on y1 in (0, 2 P1+], s in [-20, 20].

    Returns
    -------
    HypothesisReport
        Verdicts are 'pass', 'fail' or 'untested'; failures carry a witness.
    """
    from .exponents import derive_exponents, sigma_thresholds, two_star_of
    from .errors import SubcriticalError

    lattice = lattice or HypothesisLattice()
    verdicts = {h: "untested" for h in ("G0", "G1", "G2", "G3", "G4", "K", "A-")}
    witnesses: dict[str, dict] = {}
    notes: list[str] = []
    try:
        table = derive_exponents(spec, n)
    except SubcriticalError as exc:
        table = exc.table
        notes.append("subcritical: l_s <= 2*")
    _, sigma_up = sigma_thresholds(n)
    l_s, l_u = spec.l_s, spec.l_u
    P = table.P1plus
    y = np.linspace(lattice.ymax_factor * P / lattice.ny, lattice.ymax_factor * P, lattice.ny)
    s = np.linspace(-lattice.S, lattice.S, lattice.ns)
    scale_s = max(1.0, float(np.max(np.abs(spec.g(y, 0.0, l_s)))))

    # G0 on the autonomous limits (and l_s > 2*)
    lim_p = spec.limit_terms(l_s, "+")
    lim_m = spec.limit_terms(l_u, "-")
    ok_p, w_p = _g0_on(lambda yy, _s: monomials_eval(lim_p, yy), lambda yy, _s: monomials_eval(lim_p, yy, 1),
                       y, [0.0], scale_s)
    ok_m, w_m = _g0_on(lambda yy, _s: monomials_eval(lim_m, yy), lambda yy, _s: monomials_eval(lim_m, yy, 1),
                       y, [0.0], scale_s)
    if l_s <= two_star_of(n):
        verdicts["G0"] = "fail"
        witnesses["G0"] = {"reason": "l_s <= 2*", "l_s": l_s}
    elif ok_p and ok_m:
        verdicts["G0"] = "pass"
    else:
        verdicts["G0"] = "fail"
        witnesses["G0"] = w_p or w_m

    varpi_p = spec.varpi("+")
    varpi_m = spec.varpi("-")
    rates = [v for v in (varpi_p, varpi_m) if v is not None]
    varpi = min(rates) if rates else None

    def limit_check(side, l, lim, varpi_side, name):
        s_far = -lattice.S if side == "-" else lattice.S
        s_mid = s_far / 2.0
        ok, w = _g0_on(lambda yy, ss: spec.g(yy, ss, l), lambda yy, ss: spec.g_dy1(yy, ss, l),
                       y, s, 1.0)
        if not ok:
            return False, dict(w, reason="G0 fails along s: " + w.get("reason", ""))
        if l < sigma_up - 1e-9:
            return False, {"reason": "frame parameter below sigma*", "l": l, "sigma*": sigma_up}
        glim = monomials_eval(lim, y)
        gscale = float(np.max(np.abs(glim)))
        err_far = float(np.max(np.abs(spec.g(y, s_far, l) - glim))) / gscale
        err_mid = float(np.max(np.abs(spec.g(y, s_mid, l) - glim))) / gscale
        if err_far > 1e-6 or err_far > err_mid + 1e-15:
            return False, {"s": s_far, "reason": "no convergence to limit", "err": err_far}
        if varpi_side is not None:
            d_far = float(np.max(np.abs(spec.g_ds(y, s_far, l)))) * np.exp(varpi_side * abs(s_far))
            d_mid = float(np.max(np.abs(spec.g_ds(y, s_mid, l)))) * np.exp(varpi_side * abs(s_mid))
            if d_far > 1.01 * d_mid + 1e-300:
                return False, {"s": s_far, "reason": "e^(varpi|s|) ds g unbounded", "ratio": d_far / d_mid}
        return True, {}

    for name, side, l, lim, vp in (("G1", "-", l_u, lim_m, varpi_m), ("G2", "+", l_s, lim_p, varpi_p)):
        ok, w = limit_check(side, l, lim, vp, name)
        verdicts[name] = "pass" if ok else "fail"
        if not ok:
            witnesses[name] = w

    # G3: g and dg/dy1 decreasing in s (l_s frame)
    G = spec.g(y[None, :], s[:, None], l_s)
    D = spec.g_dy1(y[None, :], s[:, None], l_s)
    g3_ok = verdicts["G2"] == "pass"
    for name_arr, arr in (("g", G), ("dg/dy1", D)):
        inc = np.diff(arr, axis=0) > 1e-13 * np.maximum(np.abs(arr[:-1]), 1e-300)
        if np.any(inc):
            j, i = np.argwhere(inc)[0]
            g3_ok = False
            witnesses["G3"] = {"s": float(s[j]), "y1": float(y[i]), "reason": f"{name_arr} increases in s"}
            break
    if verdicts["G2"] != "pass" and "G3" not in witnesses:
        witnesses["G3"] = {"reason": "G2 fails"}
    verdicts["G3"] = "pass" if g3_ok else "fail"

    # G4: g(P, s) - g(P, inf) = c e^(-gamma s) + o(.)
    meta = {"l_s": l_s, "l_u": l_u, "varpi_plus": varpi_p, "varpi_minus": varpi_m, "varpi": varpi,
            "gamma": None, "c": None, "kInf": [t.k.kInf for t in spec.terms],
            "eta": [t.k.eta_eff for t in spec.terms]}
    if spec.scriptG_is_zero():
        verdicts["G4"] = "pass" if verdicts["G2"] == "pass" else "fail"
        notes.append("scriptG identically zero")
    else:
        gamma, c = g4_constants(spec, P)
        meta["gamma"], meta["c"] = gamma, c
        ss = np.linspace(lattice.S / 2, lattice.S, 21)
        resid = spec.g_eval(P, ss, l_s, "scriptG")
        if c is None or np.any(resid == 0) or np.any(np.sign(resid) != np.sign(c)):
            verdicts["G4"] = "fail"
            witnesses["G4"] = {"reason": "no exponential leading term at P1+"}
        else:
            slope, icpt = np.polyfit(ss, np.log(np.abs(resid)), 1)
            c_fit = np.sign(c) * np.exp(icpt)
            meta["gamma_fit"], meta["c_fit"] = float(-slope), float(c_fit)
            if abs(-slope - gamma) < 1e-4 * gamma and abs(c_fit - c) < 1e-3 * abs(c) and verdicts["G2"] == "pass":
                verdicts["G4"] = "pass"
            else:
                verdicts["G4"] = "fail"
                witnesses["G4"] = {"gamma_fit": float(-slope), "gamma": gamma, "c_fit": float(c_fit), "c": c}

    # K
    if spec.family == "TwoPower":
        t1, t2 = spec.terms
        val = (2.0 + t2.delta) / (t2.q - 2.0) * (t2.q - t1.q) + t1.delta
        verdicts["K"] = "pass" if val < 0 else "fail"
        if val >= 0:
            witnesses["K"] = {"condition_value": val}
        meta["K_value"] = val
    else:
        verdicts["K"] = "pass"

    # A-
    ok, w = _check_a_minus(spec, n, lattice, ymax=lattice.ymax_factor * P)
    verdicts["A-"] = "pass" if ok else "fail"
    if not ok:
        witnesses["A-"] = w
    return HypothesisReport(verdicts, witnesses, notes, meta)


def g4_constants(spec: PotentialSpec, P: float) -> tuple[float | None, float | None]:
    """Leading (gamma, c) with g(P, s; l_s) - g(P, inf; l_s) = c e^(-gamma s) + o(.)."""
    exp = spec.expansion(spec.l_s, "+", _RATE_PROBE)
    by_rate: dict[float, float] = {}
    for (rate, p), c in exp.items():
        if rate > RATE_TOL:
            by_rate[rate] = by_rate.get(rate, 0.0) + c * P ** p
    for rate in sorted(by_rate):
        if abs(by_rate[rate]) > 1e-14:
            return float(rate), float(by_rate[rate])
    return None, None
