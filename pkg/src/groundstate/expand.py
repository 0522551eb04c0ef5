"""Multi-exponential asymptotic expansions for exponentially stable systems x' = L x + N(x).

A series is a finite sum of terms  c_chi(t) exp(-(chi . rates) t), one per
multi-index chi over the distinct decay rates of L, where c_chi is a vector of
polynomials in t (secular factors). Integral operators are applied in closed
form: a forcing c t**p exp(-mu t) on an eigencoordinate with rate Lam is
resolved by solving q' + (Lam - mu) q = c t**p, or by one extra power of t
when mu = Lam (resonance).

The staged construction follows the ladder k_i with
rates[0] * sum_{j<=i} k_j <= rates[i] < rates[0] * (1 + sum_{j<=i} k_j).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import mpmath as mp
import numpy as np
from scipy.optimize import least_squares

from .potentials import gen_binom
from .errors import DivergentTailError, FitError, UnsupportedSpectrumError

RES_TOL = 1e-9        # rates closer than this are treated as equal
NEAR_RES = 1e-6       # closer than this but not equal: flagged ill-conditioned
COEF_TOL = 1e-300


# ---------------------------------------------------------------------------
# spectral structure

@dataclass(frozen=True)
class Block:
    """Eigen-block: decay rate, modal columns and whether it is a Jordan 2-block."""

    rate: float
    cols: tuple[int, ...]
    jordan: bool = False
    exact: Fraction | None = None

    @property
    def size(self) -> int:
        return len(self.cols)


class StableSystem:
    """x' = L x + N(x) with real negative spectrum.

    Parameters
    ----------
    L : (dim, dim) array
    N : dict
        Polynomial nonlinearity ``{exponents: coefficient_vector}`` where
        ``exponents`` is a tuple of length dim and every monomial has total
        degree >= 2.
    exact_rates : sequence of Fraction, optional
        Exact decay rates (one per distinct eigenvalue, ascending). When given,
        resonances are detected by exact rational comparison.
    dps : int, optional
        Decimal digits for an mpmath coefficient field (object arrays). The
        modal basis is recomputed in that precision; Jordan blocks are not
        supported in this mode.

    Notes
    -----
    Only a single Jordan 2-block is supported; complex eigenvalues and larger
    blocks raise :class:`UnsupportedSpectrumError`.
    """

    def __init__(self, L, N: dict | None = None, exact_rates: Sequence | None = None,
                 dps: int | None = None):
        L = np.atleast_2d(np.asarray(L, dtype=float))
        self.dps = dps
        self.L = L
        self.dim = L.shape[0]
        self.N = {tuple(int(e) for e in k): np.asarray(v, dtype=float) for k, v in (N or {}).items()}
        for k in self.N:
            if len(k) != self.dim:
                raise ValueError("monomial exponent length must equal dim")
            if sum(k) < 2:
                raise ValueError("N must have no constant or linear part")
        self.blocks, self.V = _decompose(L)
        self.Vinv = np.linalg.inv(self.V)
        self.Lnum = L
        if exact_rates is not None:
            if len(exact_rates) != len(self.blocks):
                raise ValueError("one exact rate per block required")
            blocks = []
            for b, r in zip(self.blocks, exact_rates):
                r = Fraction(r)
                if abs(float(r) - b.rate) > 1e-9 * max(1.0, b.rate):
                    raise ValueError("exact rate does not match spectrum")
                blocks.append(Block(float(r), b.cols, b.jordan, r))
            self.blocks = blocks
        self.rates = np.array([b.rate for b in self.blocks])
        self.m = len(self.blocks)
        if any(b.jordan for b in self.blocks) and sum(b.jordan for b in self.blocks) > 1:
            raise UnsupportedSpectrumError("at most one Jordan 2-block is supported")
        if dps is not None:
            self._to_precision()

    # coefficient field ----------------------------------------------------
    @property
    def dtype(self):
        return object if self.dps is not None else float

    def num(self, x):
        """Convert a scalar to the coefficient field."""
        if self.dps is None:
            return float(x)
        with mp.workdps(self.dps):
            if isinstance(x, Fraction):
                return mp.mpf(x.numerator) / x.denominator
            if isinstance(x, np.generic):
                x = x.item()
            return mp.mpf(x)

    def zeros(self, shape):
        if self.dps is None:
            return np.zeros(shape)
        out = np.empty(shape, dtype=object)
        out.fill(mp.mpf(0))
        return out

    def asarray(self, x):
        if self.dps is None:
            return np.asarray(x, dtype=float)
        arr = np.asarray(x, dtype=object)
        return np.vectorize(self.num, otypes=[object])(arr) if arr.size else arr

    def kappa(self, block: "Block", chi) -> object:
        """Block rate minus chi . rates in the coefficient field."""
        if self.exact:
            r = sum(Fraction(c) * b.exact for c, b in zip(chi, self.blocks))
            return self.num(block.exact - r)
        return self.num(block.rate) - self.num(self.rate(chi))

    def _to_precision(self):
        if any(b.jordan for b in self.blocks):
            raise UnsupportedSpectrumError("Jordan blocks are not supported in multiprecision mode")
        mp.mp.dps = max(mp.mp.dps, self.dps)
        with mp.workdps(self.dps):
            Lm = mp.matrix(self.L.tolist())
            cols = []
            for b in self.blocks:
                lam = -(self.num(b.exact) if b.exact is not None else mp.mpf(b.rate))
                # refine the float eigenvector by inverse iteration in high precision
                v = mp.matrix([self.V[i, b.cols[0]] for i in range(self.dim)])
                shift = lam + mp.mpf(10) ** (-self.dps // 2)
                M = Lm - shift * mp.eye(self.dim)
                for _ in range(4):
                    v = mp.lu_solve(M, v)
                    i = max(range(self.dim), key=lambda k: abs(v[k]))
                    v = v / v[i]
                for i in range(self.dim):
                    if abs(v[i]) < mp.mpf(10) ** (-self.dps + 5):
                        v[i] = mp.mpf(0)
                cols.append([v[i] for i in range(self.dim)])
            V = np.array(cols, dtype=object).T
            Vi = mp.inverse(mp.matrix(V.tolist()))
            self.V = V
            self.Vinv = np.array([[Vi[i, j] for j in range(self.dim)] for i in range(self.dim)], dtype=object)
            self.N = {k: self.asarray(v) for k, v in self.N.items()}
            self.Lnum = self.asarray(self.L)

    @property
    def exact(self) -> bool:
        return all(b.exact is not None for b in self.blocks)

    def rate(self, chi) -> float:
        return float(np.dot(chi, self.rates))

    def rate_equal(self, chi, block: Block) -> tuple[bool, bool]:
        """(equal, near) comparison of chi . rates with a block rate."""
        if self.exact:
            r = sum(Fraction(c) * b.exact for c, b in zip(chi, self.blocks))
            return r == block.exact, False
        gap = abs(self.rate(chi) - block.rate)
        scale = max(1.0, block.rate)
        return gap <= RES_TOL * scale, RES_TOL * scale < gap < NEAR_RES * scale

    def unit(self, i: int) -> tuple[int, ...]:
        return tuple(1 if j == i else 0 for j in range(self.m))

    def ladder(self) -> list[int]:
        """Sweep counts k_1 = 1, k_i = floor(r_i / r_1) - floor(r_{i-1} / r_1)."""
        return ladder(self.rates if not self.exact else [b.exact for b in self.blocks])

    def lattice(self, theta: float):
        """All multi-indices with 0 < chi . rates <= theta."""
        return lattice_points(self.rates, theta)

    def next_rate_above(self, theta: float) -> float:
        """Smallest lattice rate strictly above theta."""
        best = math.inf
        r1 = self.rates.min()
        for chi in lattice_points(self.rates, theta + self.rates.max() + r1):
            r = self.rate(chi)
            if r > theta + RES_TOL and r < best:
                best = r
        return best

    def satisfies_R2(self, theta: float | None = None) -> bool:
        """Non-resonance: no rate equals a nonnegative integer combination of smaller rates."""
        for i, b in enumerate(self.blocks):
            sub = self.rates[:i]
            if len(sub) == 0:
                continue
            for chi in lattice_points(sub, b.rate + RES_TOL):
                full = tuple(chi) + (0,) * (self.m - i)
                if sum(chi) >= 1 and self.rate_equal(full, b)[0]:
                    return False
        return not any(b.jordan for b in self.blocks)


def _decompose(L: np.ndarray):
    """Real modal basis: eigenvectors (max-abs entry +1) plus one Jordan chain if needed."""
    dim = L.shape[0]
    w, vecs = np.linalg.eig(L)
    scale = max(1.0, float(np.max(np.abs(w))))
    if np.any(np.abs(w.imag) > 1e-12 * scale):
        raise UnsupportedSpectrumError("complex eigenvalues are not supported")
    w = w.real
    if np.any(w >= 0):
        raise UnsupportedSpectrumError("spectrum must be strictly negative")
    order = np.argsort(-w)                     # ascending decay rate
    w = w[order]
    clusters: list[list[int]] = []
    for i in range(dim):
        if clusters and abs(w[i] - w[clusters[-1][0]]) <= 1e-7 * scale:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    cols = []
    blocks = []
    for cl in clusters:
        lam = float(np.mean(w[cl]))
        if len(cl) > 2:
            raise UnsupportedSpectrumError("eigenvalue multiplicity > 2 is not supported")
        M = L - lam * np.eye(dim)
        u, sv, vt = np.linalg.svd(M)
        null_dim = int(np.sum(sv <= 1e-7 * scale))
        start = len(cols)
        if len(cl) == 1:
            v = vt[-1]
            cols.append(_normalize(v))
            blocks.append(Block(-lam, (start,)))
        elif null_dim >= 2:
            cols.append(_normalize(vt[-1]))
            cols.append(_normalize(vt[-2]))
            blocks.append(Block(-lam, (start, start + 1)))
        else:
            v1 = _normalize(vt[-1])
            v2 = np.linalg.lstsq(M, v1, rcond=None)[0]
            v2 = v2 - np.dot(v2, v1) / np.dot(v1, v1) * v1
            cols.append(v1)
            cols.append(v2)
            blocks.append(Block(-lam, (start, start + 1), jordan=True))
    V = np.column_stack(cols)
    return blocks, V


def _normalize(v):
    v = np.real(np.asarray(v, dtype=complex))
    i = int(np.argmax(np.abs(v)))
    return v / v[i]


def ladder(rates) -> list[int]:
    """k_i with rates[0]*sum_{j<=i} k_j <= rates[i] < rates[0]*(1 + sum_{j<=i} k_j)."""
    r1 = rates[0]
    out = [1]
    prev = 1
    for r in rates[1:]:
        cur = int(math.floor(r / r1 + (0 if isinstance(r, Fraction) else 1e-12)))
        out.append(cur - prev)
        prev = cur
    return out


def lattice_points(rates, theta: float):
    """Multi-indices chi != 0 with chi . rates <= theta (+ tolerance)."""
    rates = [float(r) for r in rates]
    m = len(rates)
    out = []

    def rec(i, prefix, acc):
        if i == m:
            if any(prefix):
                out.append(tuple(prefix))
            return
        c = 0
        while acc + c * rates[i] <= theta + RES_TOL * max(1.0, theta):
            rec(i + 1, prefix + [c], acc + c * rates[i])
            c += 1

    rec(0, [], 0.0)
    return out


# ---------------------------------------------------------------------------
# series

def _padd(p, q):
    if p.shape[-1] < q.shape[-1]:
        p, q = q, p
    out = p.copy()
    out[..., : q.shape[-1]] += q
    return out


def _trim(p, tol=0.0):
    """Drop trailing zero polynomial coefficients (last axis)."""
    last = p.shape[-1]
    while last > 1 and np.all(np.abs(p[..., last - 1]) <= tol):
        last -= 1
    return p[..., :last]


class ExpSeries:
    """Truncated multi-exponential series in physical coordinates.

    ``terms[chi]`` is an array of shape (dim, degree + 1); entry [i, k] is the
    coefficient of t**k exp(-(chi . rates) t) in coordinate i.
    """

    def __init__(self, system: StableSystem, terms: dict | None = None, theta: float = math.inf,
                 freeCoeffs=None, log: list | None = None):
        self.system = system
        self.theta = theta
        self.terms: dict[tuple[int, ...], np.ndarray] = {}
        for chi, arr in (terms or {}).items():
            arr = np.atleast_2d(system.asarray(arr))
            if self.system.rate(chi) <= theta + RES_TOL * max(1.0, theta):
                self.terms[tuple(chi)] = arr
        self.freeCoeffs = freeCoeffs
        self.resonanceLog = log if log is not None else []

    # algebra -----------------------------------------------------------
    def copy(self) -> "ExpSeries":
        return ExpSeries(self.system, {k: v.copy() for k, v in self.terms.items()}, self.theta,
                         self.freeCoeffs, list(self.resonanceLog))

    def __add__(self, other: "ExpSeries") -> "ExpSeries":
        out = self.copy()
        out.theta = min(self.theta, other.theta)
        for chi, arr in other.terms.items():
            out.terms[chi] = _padd(out.terms[chi], arr) if chi in out.terms else arr.copy()
        out._truncate()
        return out

    def __sub__(self, other: "ExpSeries") -> "ExpSeries":
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "ExpSeries":
        out = self.copy()
        for chi in out.terms:
            out.terms[chi] = out.terms[chi] * c
        return out

    def multiply(self, other: "ExpSeries") -> "ExpSeries":
        """Coordinate-wise product: rates add, secular polynomials multiply."""
        theta = min(self.theta, other.theta)
        terms = _vmul(self.terms, other.terms, self.system, theta)
        return ExpSeries(self.system, terms, theta)

    def _truncate(self):
        lim = self.theta + RES_TOL * max(1.0, self.theta)
        self.terms = {k: v for k, v in self.terms.items() if self.system.rate(k) <= lim}

    @property
    def remainderExponent(self) -> float:
        return self.system.next_rate_above(self.theta) if math.isfinite(self.theta) else math.inf

    def max_degree(self) -> int:
        return max((_trim(v).shape[-1] - 1 for v in self.terms.values()), default=0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(np.all(np.abs(v) <= tol) for v in self.terms.values())

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.terms.values()), default=0.0)

    # calculus / evaluation ------------------------------------------------
    def derivative(self) -> "ExpSeries":
        out = {}
        for chi, arr in self.terms.items():
            r = self.system.num(self.system.rate(chi)) if not self.system.exact else \
                self.system.num(sum(Fraction(c) * b.exact for c, b in zip(chi, self.system.blocks)))
            d = -r * arr
            if arr.shape[-1] > 1:
                k = np.arange(1, arr.shape[-1])
                d[..., :-1] += arr[..., 1:] * k
            out[chi] = d
        return ExpSeries(self.system, out, self.theta)

    def linear(self, A: np.ndarray) -> "ExpSeries":
        return ExpSeries(self.system, {k: A @ v for k, v in self.terms.items()}, self.theta)

    def __call__(self, t) -> np.ndarray:
        """Evaluate at times t; returns shape (dim, len(t))."""
        if self.system.dps is not None:
            return self._call_mp(t)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((self.system.dim, t.size))
        for chi, arr in self.terms.items():
            e = np.exp(-self.system.rate(chi) * t)
            for i in range(arr.shape[0]):
                out[i] += np.polynomial.polynomial.polyval(t, arr[i]) * e
        return out

    def _call_mp(self, t) -> np.ndarray:
        sys_ = self.system
        ts = [sys_.num(x) for x in np.atleast_1d(t)]
        out = sys_.zeros((sys_.dim, len(ts)))
        with mp.workdps(sys_.dps):
            for chi, arr in self.terms.items():
                r = sys_.num(sum(Fraction(c) * b.exact for c, b in zip(chi, sys_.blocks))) if sys_.exact \
                    else sys_.num(sys_.rate(chi))
                for k, tk in enumerate(ts):
                    e = mp.exp(-r * tk)
                    for i in range(arr.shape[0]):
                        out[i, k] += mp.polyval(list(arr[i])[::-1], tk) * e
        return out

    def to_dict(self) -> dict:
        items = []
        for chi in sorted(self.terms, key=lambda c: (self.system.rate(c), c)):
            arr = _trim(self.terms[chi])
            items.append({"chi": list(chi), "rate": self.system.rate(chi), "degree": arr.shape[-1] - 1,
                          "coefficients": [[float(c) for c in row] for row in arr]})
        return {"theta": self.theta, "remainderExponent": _jsonable(self.remainderExponent),
                "rates": self.system.rates.tolist(), "terms": items, "resonanceLog": list(self.resonanceLog)}


def _jsonable(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def _smul(a: dict, b: dict, system: StableSystem, theta: float) -> dict:
    """Product of scalar series given as {chi: 1d coefficient array}."""
    out: dict = {}
    lim = theta + RES_TOL * max(1.0, theta)
    rb = {cb: system.rate(cb) for cb in b}
    for ca, pa in a.items():
        ra = system.rate(ca)
        for cb, pb in b.items():
            if ra + rb[cb] > lim:
                continue
            chi = tuple(x + y for x, y in zip(ca, cb))
            p = np.convolve(pa, pb)
            out[chi] = _padd(out[chi], p) if chi in out else p
    return out


def _vmul(a: dict, b: dict, system: StableSystem, theta: float) -> dict:
    out: dict = {}
    lim = theta + RES_TOL * max(1.0, theta)
    for ca, pa in a.items():
        for cb, pb in b.items():
            if system.rate(ca) + system.rate(cb) > lim:
                continue
            chi = tuple(x + y for x, y in zip(ca, cb))
            p = np.stack([np.convolve(pa[i], pb[i]) for i in range(pa.shape[0])])
            out[chi] = _padd(out[chi], p) if chi in out else p
    return out


def apply_polynomial(N: dict, series: ExpSeries, theta: float | None = None) -> ExpSeries:
    """Substitute a series into the polynomial map N, truncating at theta."""
    system = series.system
    theta = series.theta if theta is None else theta
    dim = system.dim
    comps = []
    for i in range(dim):
        comps.append({chi: arr[i] for chi, arr in series.terms.items() if np.any(arr[i] != 0)})
    cache: dict[tuple[int, int], dict] = {}

    def power(i, e):
        if e == 0:
            return None
        if (i, e) not in cache:
            cache[(i, e)] = comps[i] if e == 1 else _smul(power(i, e - 1), comps[i], system, theta)
        return cache[(i, e)]

    out: dict = {}
    for expo, coef in N.items():
        prod = None
        for i, e in enumerate(expo):
            if e == 0:
                continue
            p = power(i, e)
            prod = p if prod is None else _smul(prod, p, system, theta)
            if not prod:
                break
        if not prod:
            continue
        for chi, poly in prod.items():
            contrib = np.outer(coef, poly)
            out[chi] = _padd(out[chi], contrib) if chi in out else contrib
    return ExpSeries(system, out, theta)


# ---------------------------------------------------------------------------
# resolvent

def _scalar_particular(c: np.ndarray, kappa) -> np.ndarray:
    """Polynomial P with P' + kappa P = c (kappa != 0)."""
    d = len(c) - 1
    P = np.zeros(d + 1) if c.dtype != object else np.array([c[0] * 0] * (d + 1), dtype=object)
    P[d] = c[d] / kappa
    for k in range(d - 1, -1, -1):
        P[k] = (c[k] - (k + 1) * P[k + 1]) / kappa
    return P


def _scalar_resonant(c: np.ndarray) -> np.ndarray:
    """Polynomial P with P' = c and P(0) = 0."""
    P = np.zeros(len(c) + 1) if c.dtype != object else np.array([c[0] * 0] * (len(c) + 1), dtype=object)
    for k in range(len(c)):
        P[k + 1] = c[k] / (k + 1)
    return P


def resolve_forcing(system: StableSystem, forcing: ExpSeries, stage: int, homogeneous: bool = True,
                    log: list | None = None) -> ExpSeries:
    """Closed-form response y of y' = L y + M to a forcing series M.

    Parameters
    ----------
    system : StableSystem
    forcing : ExpSeries
    stage : int
        1-based index i: projections onto blocks 1..i use -int_t^inf, the
        remaining blocks use int_0^t.
    homogeneous : bool
        Include the homogeneous component generated by the lower limit of
        int_0^t. It only shifts the free coefficients of the seeds, so the
        staged expansion drops it.
    log : list, optional
        Resonances encountered are appended here.

    Raises
    ------
    DivergentTailError
        If a term projected on a block <= stage decays no faster than that block.
    """
    out: dict = {}
    if log is None:
        log = []
    for chi, arr in forcing.terms.items():
        if not np.any(arr):
            continue
        mu = system.rate(chi)
        modal = system.Vinv @ arr
        resp = system.zeros((system.dim, arr.shape[-1] + 2))
        hom = system.zeros((system.dim, arr.shape[-1] + 2))
        for bi, blk in enumerate(system.blocks):
            sub = modal[list(blk.cols)]
            if not np.any(sub):
                continue
            equal, near = system.rate_equal(chi, blk)
            tail = bi < stage
            if tail and (equal or mu < blk.rate):
                raise DivergentTailError(
                    f"forcing rate {mu:g} on block {bi + 1} (rate {blk.rate:g}) at stage {stage}")
            if near:
                log.append({"chi": list(chi), "block": bi + 1, "kind": "ill-conditioned near-resonance",
                            "gap": mu - blk.rate})
            if equal:
                log.append({"chi": list(chi), "block": bi + 1, "kind": "resonance", "rate": mu})
            kappa = 0 if equal else system.kappa(blk, chi)
            sol = _block_solve(sub, kappa, blk.jordan)
            for j, col in enumerate(blk.cols):
                resp[col, : len(sol[j])] += sol[j]
            if homogeneous and not tail and not equal:
                p0 = np.array([s[0] for s in sol])
                # x(0) = 0: add exp(J t)(-p0)
                if blk.jordan:
                    hom[blk.cols[0], 0] -= p0[0]
                    hom[blk.cols[0], 1] -= p0[1]
                    hom[blk.cols[1], 0] -= p0[1]
                else:
                    for j, col in enumerate(blk.cols):
                        hom[col, 0] -= p0[j]
                unit = system.unit(bi)
                phys_h = system.V @ hom
                hom = system.zeros(hom.shape)
                phys_h = _trim(phys_h)
                out[unit] = _padd(out[unit], phys_h) if unit in out else phys_h
        phys = _trim(system.V @ resp)
        out[chi] = _padd(out[chi], phys) if chi in out else phys
    return ExpSeries(system, out, forcing.theta, log=log)


def _block_solve(sub: np.ndarray, kappa: float, jordan: bool) -> list[np.ndarray]:
    """Solve the modal equations of one block for polynomial coefficients."""
    solve = _scalar_resonant if kappa == 0 else (lambda c: _scalar_particular(c, kappa))
    if not jordan:
        return [solve(sub[j]) for j in range(sub.shape[0])]
    # w_top' = -Lam w_top + w_bot + F_top ; w_bot' = -Lam w_bot + F_bot
    bot = solve(sub[1])
    top = solve(_padd(sub[0], bot))
    return [top, bot]


# ---------------------------------------------------------------------------
# staged expansion

def _seed(system: StableSystem, bi: int, d) -> np.ndarray:
    blk = system.blocks[bi]
    d = np.atleast_1d(system.asarray(d))
    if d.size != blk.size:
        raise ValueError(f"block {bi + 1} needs {blk.size} free coefficients")
    modal = system.zeros((system.dim, 2))
    if blk.jordan:
        modal[blk.cols[0], 0] = d[0]
        modal[blk.cols[0], 1] = d[1]
        modal[blk.cols[1], 0] = d[1]
    else:
        for j, col in enumerate(blk.cols):
            modal[col, 0] = d[j]
    return _trim(system.V @ modal)


def _split_free(system: StableSystem, freeCoeffs) -> list[np.ndarray]:
    if isinstance(freeCoeffs, (list, tuple)) and len(freeCoeffs) == system.m and all(
            np.ndim(x) <= 1 and np.size(x) == b.size for x, b in zip(freeCoeffs, system.blocks)):
        return [np.atleast_1d(system.asarray(x)) for x in freeCoeffs]
    flat = system.asarray(freeCoeffs).ravel()
    if flat.size != system.dim:
        raise ValueError("freeCoeffs must be per-block vectors or a flat modal vector of length dim")
    return [flat[list(b.cols)] for b in system.blocks]


def expand_orbit(system: StableSystem, freeCoeffs, theta: float) -> ExpSeries:
    """Asymptotic series of the orbit with free coefficients d_i, truncated at rate theta.

    Stage i adds the seed exp(L t) d_i and applies k_{i+1} correction sweeps
    a = R_i[N(A) - N(S)], where S is the last partial sum whose nonlinear image
    has already been resolved. The last stage sweeps until no term of rate
    <= theta changes, so the result solves x' = L x + N(x) up to that order.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    d = _split_free(system, freeCoeffs)
    ks = system.ladder() + [None]
    log: list = []
    A = ExpSeries(system, {}, theta, log=log)
    NS = ExpSeries(system, {}, theta)
    max_sweeps = int(math.ceil(theta / system.rates[0])) + 2
    for i in range(system.m):
        if np.any(d[i]):
            A = A + ExpSeries(system, {system.unit(i): _seed(system, i, d[i])}, theta)
        sweeps = ks[i + 1] if i + 1 < system.m else max_sweeps
        for _ in range(sweeps):
            NA = apply_polynomial(system.N, A, theta)
            M = NA - NS
            a = resolve_forcing(system, M, stage=i + 1, homogeneous=False, log=log)
            NS = NA
            if a.is_zero() and i + 1 == system.m:
                break
            A = A + a
    A.freeCoeffs = [[float(v) for v in x] for x in d]
    A.resonanceLog = _dedupe(log)
    A.theta = theta
    return A


def _dedupe(log):
    seen, out = set(), []
    for e in log:
        key = (tuple(e["chi"]), e["block"], e["kind"])
        if key not in seen:
            seen.add(key)
            out.append(e)
    return out


def symbolic_residual(series: ExpSeries, theta_eval: float | None = None) -> ExpSeries:
    """x' - L x - N(x) computed in the term algebra.

    N(x) is evaluated up to ``theta_eval`` (default: theta plus the largest
    rate), so terms of rate above theta show what the truncation dropped.
    """
    system = series.system
    theta_eval = series.theta + system.rates.max() if theta_eval is None else theta_eval
    big = ExpSeries(system, series.terms, theta_eval)
    res = big.derivative() - big.linear(system.Lnum) - apply_polynomial(system.N, big, theta_eval)
    res.theta = theta_eval
    return res


def residual_report(series: ExpSeries) -> dict:
    """Max relative coefficient of the residual at rates <= theta, and the first surviving rate."""
    system = series.system
    theta_eval = series.theta + system.rates.max()
    big = ExpSeries(system, series.terms, theta_eval)
    parts = [big.derivative(), big.linear(system.Lnum), apply_polynomial(system.N, big, theta_eval)]
    res = parts[0] - parts[1] - parts[2]
    worst, first = 0.0, math.inf
    lim = series.theta + RES_TOL * max(1.0, series.theta)
    # scale: largest contribution at this chi or any series term feeding it (rate <= chi's rate)
    mags = sorted((system.rate(c), float(np.max(np.abs(a)))) for c, a in series.terms.items())
    for chi, arr in res.terms.items():
        r = system.rate(chi)
        feed = max((mg for rr, mg in mags if rr <= r + RES_TOL), default=0.0)
        local = max((float(np.max(np.abs(p.terms[chi]))) for p in parts if chi in p.terms), default=0.0)
        scale = max(local, feed, COEF_TOL)
        rel = float(np.max(np.abs(arr))) / scale
        if r <= lim:
            worst = max(worst, rel)
        elif rel > 1e-10:
            first = min(first, r)
    return {"max_relative_residual": worst, "first_surviving_rate": first}


# ---------------------------------------------------------------------------
# parametric evaluation (coefficients are polynomials in the free coefficients)

class ParametricExpansion:
    """Expansion whose term coefficients are kept as polynomials in the free coefficients.

    With diagonal blocks, the coefficient of chi is K_chi * prod_i d_i**chi_i.
    A Jordan 2-block enters through a homogeneous polynomial of degree
    chi_block in its two free coefficients; that polynomial is recovered from
    chi_block + 1 evaluations.

    Parameters
    ----------
    system : StableSystem
    theta : float
    fixed : dict, optional
        ``{block_index: d}`` for blocks whose free coefficients are pinned.
    """

    def __init__(self, system: StableSystem, theta: float, fixed: dict | None = None):
        self.system = system
        self.theta = theta
        self.fixed = {int(k): np.atleast_1d(np.asarray(v, dtype=float)) for k, v in (fixed or {}).items()}
        self.jb = next((i for i, b in enumerate(system.blocks) if b.size == 2), None)
        lattice = system.lattice(theta)
        kmax = max((chi[self.jb] for chi in lattice), default=0) if self.jb is not None else 0
        base = [self.fixed.get(i, np.ones(b.size)) for i, b in enumerate(system.blocks)]
        if self.jb is None:
            ser = expand_orbit(system, base, theta)
            self.K = {chi: [arr] for chi, arr in ser.terms.items()}
            self.log = ser.resonanceLog
            return
        if self.jb in self.fixed:
            raise ValueError("the 2-block cannot be pinned")
        angles = np.linspace(0.15, 1.35, kmax + 1)
        samples = []
        for ang in angles:
            dd = list(base)
            dd[self.jb] = np.array([math.cos(ang), math.sin(ang)])
            samples.append(expand_orbit(system, dd, theta))
        self.log = samples[0].resonanceLog
        self.K = {}
        keys = set().union(*[s.terms.keys() for s in samples])
        for chi in keys:
            k = chi[self.jb]
            Vm = np.array([[math.cos(a) ** (k - j) * math.sin(a) ** j for j in range(k + 1)] for a in angles[: k + 1]])
            width = max(s.terms[chi].shape[-1] for s in samples if chi in s.terms)
            rhs = np.stack([_pad_to(s.terms.get(chi, np.zeros((system.dim, 1))), width) for s in samples[: k + 1]])
            sol = np.linalg.solve(Vm, rhs.reshape(k + 1, -1)).reshape((k + 1,) + rhs.shape[1:])
            self.K[chi] = list(sol)

    def coefficients(self, free: Sequence) -> dict:
        """Term arrays for the given free coefficients (pinned blocks ignored)."""
        d = [self.fixed.get(i, np.atleast_1d(np.asarray(free[i], dtype=float)))
             for i in range(self.system.m)]
        out = {}
        for chi, parts in self.K.items():
            fac = 1.0
            for i, b in enumerate(self.system.blocks):
                if i == self.jb or chi[i] == 0 or i in self.fixed:
                    continue
                fac *= float(d[i][0]) ** chi[i]
            if self.jb is None:
                out[chi] = parts[0] * fac
            else:
                k = chi[self.jb]
                u, v = d[self.jb]
                acc = sum(parts[j] * (u ** (k - j) * v ** j) for j in range(k + 1))
                out[chi] = acc * fac
        return out

    def series(self, free: Sequence) -> ExpSeries:
        return ExpSeries(self.system, self.coefficients(free), self.theta, log=self.log)


def _pad_to(arr, width):
    out = np.zeros((arr.shape[0], width))
    out[:, : arr.shape[-1]] = arr
    return out


def fit_free_coefficients(system: StableSystem, t, x, theta: float, observe: Sequence[int] | None = None,
                          fixed: dict | None = None, d0=None, offset=None, residual_floor: float = 1e-6):
    """Least-squares fit of the free coefficients to trajectory samples.

    Parameters
    ----------
    system : StableSystem
    t : (k,) array
        Sample times.
    x : (dim, k) or (len(observe), k) array
        Samples of x(t) (relative to the fixed point).
    theta : float
        Truncation order of the model series.
    observe : sequence of int, optional
        Observed coordinates (all by default).
    fixed : dict, optional
        Pinned blocks ``{block_index: d}``.
    d0 : sequence, optional
        Initial guess; default is the modal projection of the first sample,
        d_i = P_i x(t0) exp(rate_i t0).
    offset : callable, optional
        Known function of t added to the model (e.g. a fixed point).
    residual_floor : float
        Relative RMS residual above which :class:`FitError` is raised.

    Returns
    -------
    d : list of arrays
    info : dict
        RMS residual, relative residual, optimizer status.
    """
    t = np.asarray(t, dtype=float)
    observe = list(range(system.dim)) if observe is None else list(observe)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == system.dim and len(observe) != system.dim:
        x = x[observe]
    fixed = fixed or {}
    par = ParametricExpansion(system, theta, fixed)
    free_blocks = [i for i in range(system.m) if i not in fixed]
    sizes = [system.blocks[i].size for i in free_blocks]
    if d0 is None:
        full = np.zeros(system.dim)
        full[observe] = x[:, 0]
        modal = system.Vinv @ full
        d0 = [modal[list(system.blocks[i].cols)] * math.exp(system.blocks[i].rate * t[0]) for i in free_blocks]
    else:
        d0 = [np.atleast_1d(np.asarray(d0[i], dtype=float)) for i in free_blocks]
    p0 = np.concatenate(d0) if d0 else np.zeros(0)
    base = offset(t) if offset is not None else 0.0

    def unpack(p):
        free = [np.zeros(b.size) for b in system.blocks]
        pos = 0
        for i, sz in zip(free_blocks, sizes):
            free[i] = p[pos: pos + sz]
            pos += sz
        return free

    def model(p):
        ser = ExpSeries(system, par.coefficients(unpack(p)), theta)
        return ser(t)[observe] + base

    def resid(p):
        return (model(p) - x).ravel()

    scale = max(float(np.max(np.abs(x))), 1e-300)
    sol = least_squares(resid, p0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000,
                        x_scale="jac")
    rms = float(np.sqrt(np.mean(sol.fun ** 2)))
    info = {"rms": rms, "relative": rms / scale, "status": int(sol.status), "nfev": int(sol.nfev)}
    if rms / scale > residual_floor:
        raise FitError(f"window too early: relative residual {rms / scale:.2e} above floor {residual_floor:.0e}")
    return [np.asarray(v) for v in unpack(sol.x)], info


# ---------------------------------------------------------------------------
# Fowler specialization

@dataclass
class FowlerExpansion:
    """y1(s) = P1+ + Psi(s) + a-term + b-term + Q1(s) + Q2(s) with t = s - tau.

    ``psi``, ``q1Terms``, ``q2Terms`` map chi to the y1 polynomial coefficients
    (ascending powers of t); ``rates`` gives chi . rates per key.
    """

    P: float
    tau: float
    theta: float
    a: float
    b: float
    degenerate: bool
    block_rates: list[float]
    block_names: list[str]
    psi: dict
    q1Terms: dict
    q2Terms: dict
    linear: dict
    resonanceLog: list
    series: ExpSeries = field(repr=False)

    def _eval(self, terms: dict, s) -> np.ndarray:
        t = np.asarray(s, dtype=float) - self.tau
        out = np.zeros(np.shape(t))
        for chi, poly in terms.items():
            r = float(np.dot(chi, self.block_rates))
            out = out + np.polynomial.polynomial.polyval(t, poly) * np.exp(-r * t)
        return out

    def psi_eval(self, s):
        return self._eval(self.psi, s)

    def y1(self, s):
        return (self.P + self._eval(self.psi, s) + self._eval(self.linear, s)
                + self._eval(self.q1Terms, s) + self._eval(self.q2Terms, s))

    def to_dict(self) -> dict:
        def pack(d):
            return [{"chi": list(k), "rate": float(np.dot(k, self.block_rates)), "poly": np.asarray(v).tolist()}
                    for k, v in sorted(d.items(), key=lambda kv: float(np.dot(kv[0], self.block_rates)))]
        return {"P1plus": self.P, "tau": self.tau, "theta": self.theta, "a": self.a, "b": self.b,
                "degenerate": self.degenerate, "blocks": self.block_names, "block_rates": self.block_rates,
                "psi": pack(self.psi), "q1": pack(self.q1Terms), "q2": pack(self.q2Terms),
                "linear": pack(self.linear), "resonanceLog": self.resonanceLog}


def _base_rate(rates: list[float]) -> float | None:
    """Largest omega with every rate an integer multiple of omega (denominators up to 64)."""
    if not rates:
        return None
    r0 = min(rates)
    den = 1
    for r in rates:
        fr = Fraction(r / r0).limit_denominator(64)
        if abs(float(fr) - r / r0) > 1e-9 * max(1.0, r / r0):
            raise UnsupportedSpectrumError("s-dependence of g is not a power series in one exponential")
        den = den * fr.denominator // math.gcd(den, fr.denominator)
    return r0 / den


class FowlerSystem:
    """Stable system of the Fowler flow around (P1+, 0, 0) in coordinates (y1 - P1+, y2, zeta).

    zeta = exp(-omega t) with t = s - tau carries the s-dependence of g, where
    omega is the base rate of its expansion (the G4 rate gamma whenever all
    rates are multiples of it); zeta is dropped when g does not depend on s.
    """

    def __init__(self, table, spec, tau: float = 0.0, theta: float | None = None):
        if table.regime == "focus":
            raise UnsupportedSpectrumError("complex spectrum (focus regime) is not supported")
        lam1, lam2 = float(table.lambda1), float(table.lambda2)
        self.table, self.spec, self.tau = table, spec, float(tau)
        self.theta = 3.0 * abs(lam2) if theta is None else float(theta)
        P, A, B = table.P1plus, table.A, table.B
        self.P = P
        self.degenerate = table.regime == "degenerate-node"
        exp = spec.expansion(spec.l_s, "+", self.theta)
        lim = [(c, p) for (r, p), c in exp.items() if abs(r) <= RES_TOL]
        forcing = [(r, p, c) for (r, p), c in exp.items() if r > RES_TOL]
        self.gamma = _base_rate([r for r, _, _ in forcing])
        has_zeta = self.gamma is not None
        if has_zeta:
            for lam in (lam1, lam2):
                if abs(abs(lam) - self.gamma) <= RES_TOL * max(1.0, self.gamma):
                    raise UnsupportedSpectrumError(
                        "gamma equals a linear rate: mixed Jordan coupling is not supported")
        rate_min = min(abs(lam1), self.gamma) if has_zeta else abs(lam1)
        jmax = int(math.floor(self.theta / rate_min + 1e-9)) + 1
        dim = 3 if has_zeta else 2

        def taylor(c, p, j):
            # j-th Taylor coefficient of c y**p at P
            return c * gen_binom(p, j) * P ** (p - j)

        dg = sum(taylor(c, p, 1) for c, p in lim)
        L = np.zeros((dim, dim))
        L[0, 1] = 1.0
        L[1, 0] = B - dg
        L[1, 1] = -A
        N: dict = {}

        def add(expo, val):
            if val == 0.0:
                return
            vec = np.zeros(dim)
            vec[1] = val
            N[expo] = N.get(expo, np.zeros(dim)) + vec

        for j in range(2, jmax + 1):
            val = -sum(taylor(c, p, j) for c, p in lim)
            add((j, 0, 0)[:dim] if dim == 3 else (j, 0), val)
        if has_zeta:
            L[2, 2] = -self.gamma
            for r, p, c in forcing:
                k = int(round(r / self.gamma))
                w = math.exp(-k * self.gamma * self.tau)
                for j in range(0, jmax + 1):
                    if j * rate_min + k * self.gamma > self.theta + 1e-9:
                        break
                    val = -taylor(c, p, j) * w
                    if j == 0 and k == 1:
                        L[1, 2] += val
                    else:
                        add((j, 0, k), val)
        self.system = StableSystem(L, N)
        self.has_zeta = has_zeta
        # identify blocks
        self.names = []
        for b in self.system.blocks:
            if has_zeta and abs(b.rate - self.gamma) <= 1e-7 * max(1.0, self.gamma):
                self.names.append("zeta")
            elif b.jordan:
                self.names.append("lambda")
            elif abs(b.rate - abs(lam1)) <= 1e-7 * max(1.0, abs(lam1)):
                self.names.append("lambda1")
            else:
                self.names.append("lambda2")
        self.lam1, self.lam2 = lam1, lam2

    def free_coefficients(self, a: float, b: float) -> list[np.ndarray]:
        """Modal free coefficients realizing y1 ~ a e^{lam1 t} + b e^{lam2 t} (or a t e^{lam t} + b e^{lam t})."""
        sys_ = self.system
        V = sys_.V
        out = []
        for name, blk in zip(self.names, sys_.blocks):
            if name == "zeta":
                col = blk.cols[0]
                out.append(np.array([1.0 / V[2, col]]))
            elif name == "lambda1":
                out.append(np.array([a / V[0, blk.cols[0]]]))
            elif name == "lambda2":
                out.append(np.array([b / V[0, blk.cols[0]]]))
            else:
                # y1 = V0t (d_top + d_bot t) + V0b d_bot  ->  t-coef a, const b
                v0t, v0b = V[0, blk.cols[0]], V[0, blk.cols[1]]
                d_bot = a / v0t
                d_top = (b - v0b * d_bot) / v0t
                out.append(np.array([d_top, d_bot]))
        return out

    def zeta_block(self) -> int | None:
        return self.names.index("zeta") if "zeta" in self.names else None

    def classify(self, chi) -> str:
        """'psi', 'linear', 'q1' or 'q2' for a multi-index over blocks."""
        rates = self.system.rates
        r = float(np.dot(chi, rates))
        l1, l2 = abs(self.lam1), abs(self.lam2)
        zb = self.zeta_block()
        pure_zeta = zb is not None and all(c == 0 for i, c in enumerate(chi) if i != zb)
        if sum(chi) == 1 and not pure_zeta:
            return "linear"
        tol = RES_TOL * max(1.0, l1)
        if pure_zeta and r <= l1 + tol:
            return "psi"
        if l1 + tol < r < l2 - tol:
            return "q1"
        return "q2"


def fowler_expand(table, spec, a: float, b: float, tau: float = 0.0, theta: float | None = None,
                  parametric: "ParametricExpansion | None" = None) -> FowlerExpansion:
    """Expansion of the Fowler orbit converging to (P1+, 0) with coefficients (a, b).

    Parameters
    ----------
    table : ExponentTable
    spec : PotentialSpec
    a, b : float
        Coefficients of e^{lam1 t}, e^{lam2 t} in y1 (node), or of t e^{lam t},
        e^{lam t} (degenerate node).
    tau : float
        Time origin: t = s - tau and zeta = exp(-gamma t).
    theta : float, optional
        Truncation order, default 3 |lambda2|.
    """
    fs = FowlerSystem(table, spec, tau, theta)
    free = fs.free_coefficients(a, b)
    zb = fs.zeta_block()
    if parametric is None:
        parametric = ParametricExpansion(fs.system, fs.theta, {zb: free[zb]} if zb is not None else None)
    ser = parametric.series(free)
    psi, q1, q2, lin = {}, {}, {}, {}
    for chi, arr in ser.terms.items():
        poly = _trim(arr[0:1])[0]
        if not np.any(poly):
            continue
        kind = fs.classify(chi)
        target = {"psi": psi, "q1": q1, "q2": q2, "linear": lin}[kind]
        target[chi] = poly
    return FowlerExpansion(P=fs.P, tau=fs.tau, theta=fs.theta, a=float(a), b=float(b),
                           degenerate=fs.degenerate, block_rates=fs.system.rates.tolist(),
                           block_names=list(fs.names), psi=psi, q1Terms=q1, q2Terms=q2, linear=lin,
                           resonanceLog=list(parametric.log), series=ser)


class FowlerTailModel:
    """Fast evaluator of y1(s; a, b) for tail fitting (expansion computed once)."""

    def __init__(self, table, spec, tau: float = 0.0, theta: float | None = None):
        self.fs = FowlerSystem(table, spec, tau, theta)
        zb = self.fs.zeta_block()
        free1 = self.fs.free_coefficients(1.0, 1.0)
        self.par = ParametricExpansion(self.fs.system, self.fs.theta,
                                       {zb: free1[zb]} if zb is not None else None)

    def expansion(self, a: float, b: float) -> FowlerExpansion:
        return fowler_expand(self.fs.table, self.fs.spec, a, b, self.fs.tau, self.fs.theta, self.par)

    def y1(self, s, a: float, b: float):
        ser = self.par.series(self.fs.free_coefficients(a, b))
        return self.fs.P + ser(np.asarray(s, dtype=float) - self.fs.tau)[0]

    def psi(self, s):
        return self.expansion(0.0, 0.0).psi_eval(s)
