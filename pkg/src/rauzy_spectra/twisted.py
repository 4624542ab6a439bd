"""Twisted exponential sums over words and twisted Birkhoff integrals.

For a word ``v``, a letter ``a``, tile lengths ``s`` and a frequency ``omega``::

    Phi_a(v) = sum_{j : v_j = a} exp(-2 pi i omega |v_0 ... v_{j-1}|_s)

Twist matrices collect these sums over substitution images,
``M_{xi1,xi2}[b, c] = Phi_c^{S_xi1^t s}(xi2(b))``, and along a sequence
``Pi_n = M_n ... M_1`` with ``M_n = M_{zeta^[n-1], zeta_n}`` has
``Pi_n[b, a] = Phi_a(zeta^[n](b))``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from math import lcm
from typing import Callable, Sequence

import numpy as np

from .bv import (
    PathPrefix,
    SubstitutionSequence,
    expand,
    forward_word,
    level_roof,
    level_word,
    prefix_suffix,
)
from .substitution import (Substitution, Word, c1_constant, good_return_words, population_vector,
                           select_return_basis, subst_matrix)

TWO_PI = 2.0 * math.pi


class NotCanonicalError(ValueError):
    pass


# --- sums over words --------------------------------------------------------

def _prefix_phases(word: np.ndarray, frac: np.ndarray) -> np.ndarray:
    """``sum_c #{i < j : word[i] = c} frac[c]`` mod 1, for every j.

    Each ``frac[c]`` is split into a 24-bit head and a tail.  Counts times
    heads are exact in float64, so a plain cumulative sum (whose rounding
    grows with the word length) is avoided.
    """
    word = np.asarray(word, dtype=np.int64)
    frac = np.asarray(frac, dtype=float)
    head = np.round(frac * 2.0**24) / 2.0**24
    tail = frac - head
    ph = np.zeros(len(word))
    small = np.zeros(len(word))
    for c in range(len(frac)):
        hit = word == c + 1
        cnt = (np.cumsum(hit) - hit).astype(float)
        ph = np.mod(ph + cnt * head[c], 1.0)
        small += cnt * tail[c]
    return np.mod(ph + small, 1.0)


def _phases(word: np.ndarray, s: np.ndarray, omega: float) -> np.ndarray:
    """``omega * |word[:j]|_s`` reduced mod 1, for every j."""
    return _prefix_phases(word, np.mod(omega * s, 1.0))


def phi_direct(a: int, v: Sequence[int], s: Sequence[float], omega: float) -> complex:
    """Direct evaluation of ``Phi_a^s(v, omega)``, term by term.

    Prefix phases ``omega |v_0 ... v_{j-1}|_s`` are accumulated exactly mod 1
    (floats are read as the dyadic rationals they store), so the only
    rounding is in the final exponentials.
    """
    xs = [Fraction(omega) * Fraction(float(x)) for x in s]
    D = 1
    for x in xs:
        D = lcm(D, x.denominator)
    step = [int(x * D) % D for x in xs]
    acc = 0
    total = 0j
    for c in v:
        c = int(c)
        if c == a:
            total += cmath.exp(-2j * math.pi * (acc / D))
        acc = (acc + step[c - 1]) % D
    return total


def phi_all(v: Sequence[int], s: Sequence[float], omega: float, m: int | None = None) -> np.ndarray:
    """``[Phi_1(v), ..., Phi_m(v)]`` using phases reduced mod 1."""
    w = np.asarray(v, dtype=np.int64)
    s = np.asarray(s, dtype=float)
    m = len(s) if m is None else m
    if len(w) == 0:
        return np.zeros(m, dtype=complex)
    e = np.exp(-2j * np.pi * _phases(w, s, omega))
    return np.bincount(w - 1, weights=e.real, minlength=m) + 1j * np.bincount(w - 1, weights=e.imag, minlength=m)


def phi_prefix_sums(v: np.ndarray, s: np.ndarray, omega: float, m: int) -> np.ndarray:
    """``out[N, a-1] = Phi_a(v[:N])`` for N = 0..len(v)."""
    w = np.asarray(v, dtype=np.int64)
    e = np.exp(-2j * np.pi * _phases(w, np.asarray(s, dtype=float), omega))
    out = np.zeros((len(w) + 1, m), dtype=complex)
    for a in range(1, m + 1):
        out[1:, a - 1] = np.cumsum(np.where(w == a, e, 0))
    return out


# --- twist matrices ---------------------------------------------------------

def _frac_roof(s, omega) -> np.ndarray:
    return np.mod(omega * np.asarray(s, dtype=float), 1.0)


def twist_matrix_from_phases(images: Sequence[Word], frac: np.ndarray) -> np.ndarray:
    """``M[b, c] = sum over c in image(b) of exp(-2 pi i <prefix, frac>)``.

    ``frac`` is ``omega * roof`` reduced mod 1.
    """
    m = len(images)
    M = np.zeros((m, m), dtype=complex)
    for b, w in enumerate(images):
        w = np.asarray(w, dtype=np.int64)
        e = np.exp(-2j * np.pi * _prefix_phases(w, frac))
        M[b] = np.bincount(w - 1, weights=e.real, minlength=m) + 1j * np.bincount(w - 1, weights=e.imag, minlength=m)
    return M


def twist_matrix(xi1: Substitution | np.ndarray, xi2: Substitution, s: Sequence[float], omega: float) -> np.ndarray:
    """``M_{xi1, xi2}(omega)`` for tile lengths ``s``.

    ``xi1`` enters only through its matrix, so a matrix may be passed.
    """
    S1 = subst_matrix(xi1) if isinstance(xi1, Substitution) else np.asarray(xi1)
    roof = S1.T.astype(float) @ np.asarray(s, dtype=float)
    return twist_matrix_from_phases(xi2.images, _frac_roof(roof, omega))


# --- exact modular orbit ----------------------------------------------------

class ModularOrbit:
    """``frac(omega * s^(k))`` for k = 0..N in exact rational arithmetic.

    ``omega`` and ``s`` are taken at face value as rationals (a float is the
    dyadic rational it stores).  With a common denominator ``D`` the orbit is
    an integer vector updated by ``X_k = S_k^t X_{k-1} mod D``, so no
    rounding error accumulates.
    """

    def __init__(self, seq: SubstitutionSequence, s: Sequence, omega, depth: int | None = None):
        om = Fraction(omega)
        xs = [om * Fraction(x) for x in s]
        D = 1
        for x in xs:
            D = lcm(D, x.denominator)
        self.D = D
        self.precision_bits = D.bit_length()
        X = [int(x * D) % D for x in xs]
        self._orbit = [X]
        depth = len(seq) if depth is None else depth
        for k in range(1, depth + 1):
            St = seq.matrix(k).T
            X = [int(sum(int(St[i, j]) * X[j] for j in range(len(X)))) % D for i in range(len(X))]
            self._orbit.append(X)

    def __len__(self):
        return len(self._orbit)

    def exact(self, k: int) -> list[Fraction]:
        return [Fraction(x, self.D) for x in self._orbit[k]]

    def frac(self, k: int) -> np.ndarray:
        return np.array([x / self.D for x in self._orbit[k]], dtype=float)

    def dist(self, word: Sequence[int], k: int) -> float:
        """``|| omega |zeta^[k](word)|_s ||`` (distance to the nearest integer)."""
        pop = population_vector(word, len(self._orbit[k]))
        r = sum(int(c) * x for c, x in zip(pop, self._orbit[k])) % self.D
        return min(r, self.D - r) / self.D


# --- products ---------------------------------------------------------------

def pi_product(seq: SubstitutionSequence, s: Sequence[float], omega: float, n: int | None = None) -> list[np.ndarray]:
    """``[Pi_0, Pi_1, ..., Pi_n]`` with ``Pi_0 = I``."""
    n = len(seq) if n is None else n
    orbit = ModularOrbit(seq, s, omega, depth=max(n - 1, 0))
    P = np.eye(seq.m, dtype=complex)
    out = [P]
    for k in range(1, n + 1):
        M = twist_matrix_from_phases(seq[k].images, orbit.frac(k - 1))
        P = M @ P
        out.append(P)
    return out


def twist_sequence(seq: SubstitutionSequence, s, omega, n: int | None = None) -> list[np.ndarray]:
    """``[M_1, ..., M_n]``."""
    n = len(seq) if n is None else n
    orbit = ModularOrbit(seq, s, omega, depth=max(n - 1, 0))
    return [twist_matrix_from_phases(seq[k].images, orbit.frac(k - 1)) for k in range(1, n + 1)]


# --- Diophantine bounds -----------------------------------------------------

@dataclass
class DiophBound:
    bound: float
    product: float
    factors: np.ndarray  # factor for each k in the product range
    c1: float
    variant: str


def _norm1(P) -> float:
    return float(max(int(x) for x in np.asarray(P).sum(axis=0)))


class DiophantineData:
    """Per-level factors ``1 - c1 max_v ||omega |zeta^[k](v)|_s||^2``."""

    def __init__(self, seq: SubstitutionSequence, s, omega, returns: Sequence[Word] | None = None, depth=None):
        if seq.canonical is None:
            raise NotCanonicalError("Diophantine bounds need a sequence in canonical form q o xi_n o q")
        self.seq = seq
        q = seq.canonical.q
        self.Q = subst_matrix(q)
        if np.any(self.Q <= 0):
            raise NotCanonicalError("the q block must have a strictly positive matrix")
        if returns is None:
            returns = select_return_basis(q)
            if returns is None:
                raise NotCanonicalError("good return words of q do not span")
        elif isinstance(returns, str) and returns == "all":
            returns = sorted(good_return_words(q), key=lambda w: (len(w), w))
        else:
            gr = good_return_words(q, max(len(w) for w in returns))
            bad = [w for w in returns if tuple(w) not in gr]
            if bad:
                raise ValueError(f"not good return words of q: {bad[:3]}")
        if not returns:
            raise NotCanonicalError("q has no good return words")
        self.returns = [tuple(w) for w in returns]
        self.colQt, self.c1 = c1_constant(self.Q)
        depth = len(seq) if depth is None else depth
        self.orbit = ModularOrbit(seq, s, omega, depth=depth)
        self.dmax = np.array([max(self.orbit.dist(v, k) for v in self.returns) for k in range(depth + 1)])

    def factor(self, k: int) -> float:
        return 1.0 - self.c1 * self.dmax[k] ** 2

    def product(self, lo: int, hi: int) -> float:
        if hi < lo:
            return 1.0
        return float(np.prod([self.factor(k) for k in range(lo, hi + 1)]))

    def product_bound(self, N: int) -> DiophBound:
        """``||S^[N]||_1 prod_{k=0}^{N-1}`` bound on ``|Phi_a(zeta^[N](b))|``."""
        prod = self.product(0, N - 1)
        f = np.array([self.factor(k) for k in range(N)])
        return DiophBound(_norm1(self.seq.prefix_product(N)) * prod, prod, f, self.c1, "product")

    def level_bound(self, ell: int, n: int) -> DiophBound:
        """Bound on ``|Phi_a^{s^(ell)}(zeta^[ell+1,n](b))|``."""
        prod = self.product(ell + 1, n - 1)
        f = np.array([self.factor(k) for k in range(ell + 1, n)])
        return DiophBound(_norm1(self.seq.product(ell + 1, n)) * prod, prod, f, self.c1, "level")

    def prefix_bound(self, ell: int, n: int) -> DiophBound:
        """Bound on ``|Phi_a^{s^(ell)}|`` of any level-``ell`` word whose
        prefix-suffix decomposition has depth ``n`` (needs step ``n+1``)."""
        if n + 1 > len(self.seq):
            raise IndexError("the bound uses the step after n")
        total = 0.0
        for j in range(ell, n + 1):
            head = 1.0 if j == ell else _norm1(self.seq.product(ell + 1, j))
            total += head * _norm1(self.seq.matrix(j + 1)) * self.product(ell + 1, j - 1)
        prod = self.product(ell + 1, n - 1)
        f = np.array([self.factor(k) for k in range(ell + 1, n)])
        return DiophBound(2.0 * total, prod, f, self.c1, "prefix")


def dioph_bound(seq: SubstitutionSequence, s, omega, returns=None, N: int | None = None,
                variant: str = "product", ell: int = 0) -> DiophBound:
    N = len(seq) if N is None else N
    data = DiophantineData(seq, s, omega, returns, depth=min(len(seq), N + 1))
    if variant == "product":
        return data.product_bound(N)
    if variant == "level":
        return data.level_bound(ell, N)
    if variant == "prefix":
        return data.prefix_bound(ell, N)
    raise ValueError(f"unknown variant {variant!r}")


# --- profiles and cylindrical functions -------------------------------------

def _exp_moments(z: np.ndarray, kmax: int) -> list[np.ndarray]:
    """``E_k(z) = int_0^1 u^k exp(-z u) du`` for k = 0..kmax."""
    z = np.asarray(z, dtype=complex)
    out = [np.empty_like(z) for _ in range(kmax + 1)]
    small = np.abs(z) < 2.0
    if np.any(small):
        zs = z[small]
        for k in range(kmax + 1):
            term = np.ones_like(zs)
            acc = term / (k + 1)
            for j in range(1, 40):
                term = term * (-zs) / j
                acc = acc + term / (k + j + 1)
            out[k][small] = acc
    big = ~small
    if np.any(big):
        zb = z[big]
        ez = np.exp(-zb)
        e = (1 - ez) / zb
        out[0][big] = e
        for k in range(1, kmax + 1):
            e = (k * e - ez) / zb
            out[k][big] = e
    return out


class PiecewisePolynomial:
    """Piecewise polynomial profile on ``[breaks[0], breaks[-1]]``.

    On ``[breaks[i], breaks[i+1])`` the value is
    ``sum_k coeffs[i][k] * (t - breaks[i])**k`` with degree at most 3.
    """

    def __init__(self, breaks: Sequence[float], coeffs: Sequence[Sequence[float]]):
        self.breaks = np.asarray(breaks, dtype=float)
        if len(coeffs) != len(self.breaks) - 1:
            raise ValueError("need one coefficient list per piece")
        deg = max(len(c) for c in coeffs) - 1
        if deg > 3:
            raise ValueError("degree at most 3")
        self.coeffs = np.zeros((len(coeffs), 4))
        for i, c in enumerate(coeffs):
            self.coeffs[i, : len(c)] = c

    @classmethod
    def constant(cls, value: float, length: float) -> "PiecewisePolynomial":
        return cls([0.0, length], [[value]])

    @property
    def length(self) -> float:
        return float(self.breaks[-1] - self.breaks[0])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        i = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0, len(self.coeffs) - 1)
        x = t - self.breaks[i]
        c = self.coeffs[i]
        return c[..., 0] + x * (c[..., 1] + x * (c[..., 2] + x * c[..., 3]))

    def integral_exp(self, omega: float, lo, hi) -> np.ndarray:
        """``int_lo^hi exp(-2 pi i omega t) psi(t) dt`` in closed form (vectorized)."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        total = np.zeros(np.broadcast(lo, hi).shape, dtype=complex)
        for i in range(len(self.coeffs)):
            a = np.maximum(lo, self.breaks[i])
            b = np.minimum(hi, self.breaks[i + 1])
            ok = b > a
            if not np.any(ok):
                continue
            a, b = a[ok], b[ok]
            h = b - a
            alpha = a - self.breaks[i]
            z = 2j * np.pi * omega * h
            E = _exp_moments(z, 3)
            c = self.coeffs[i]
            acc = np.zeros(len(a), dtype=complex)
            # (alpha + h u)^k expanded in powers of u
            for k in range(4):
                if c[k] == 0:
                    continue
                for j in range(k + 1):
                    acc += c[k] * math.comb(k, j) * alpha ** (k - j) * h**j * E[j]
            total[ok] += h * np.exp(-2j * np.pi * omega * a) * acc
        return total

    def transform(self, omega: float) -> complex:
        """``psi_hat(omega) = int exp(-2 pi i omega t) psi(t) dt``."""
        return complex(self.integral_exp(omega, self.breaks[0], self.breaks[-1])[0])


@dataclass
class CylindricalFunction:
    """``f = sum_a 1_{level-ell tile of a} psi_a(time within the tile)``.

    ``profiles[a - 1]`` is a :class:`PiecewisePolynomial` on
    ``[0, s^(ell)_a]`` or a plain callable (quadrature mode only).
    """

    level: int
    profiles: Sequence[PiecewisePolynomial | Callable]

    def closed_form(self) -> bool:
        return all(isinstance(p, PiecewisePolynomial) for p in self.profiles)


@dataclass
class TwistedIntegral:
    R: float
    R_snapped: float
    snap_gap: float
    formula: complex | None  # value at R_snapped
    quadrature: complex | None  # value at R
    quadrature_snapped: complex | None  # value at R_snapped


def _gauss_integral(fn: Callable, omega: float, lo: np.ndarray, hi: np.ndarray, nodes: int = 16) -> np.ndarray:
    x, w = np.polynomial.legendre.leggauss(nodes)
    mid = (lo + hi) / 2
    half = (hi - lo) / 2
    t = mid[:, None] + half[:, None] * x[None, :]
    vals = np.asarray(fn(t), dtype=complex) * np.exp(-2j * np.pi * omega * t)
    return half * (vals * w[None, :]).sum(axis=1)


def _level_start_offset(seq: SubstitutionSequence, p: PathPrefix, s, ell: int) -> float:
    """Time from the start of the level-``ell`` tile containing ``p`` to ``p``."""
    ps = prefix_suffix(seq, p)
    t0 = 0.0
    for k in range(ell):
        u = ps[k][0]
        if u:
            t0 += float(population_vector(u, seq.m) @ level_roof(seq, s, k))
    return t0


def twisted_birkhoff(
    seq: SubstitutionSequence,
    p: PathPrefix,
    f: CylindricalFunction,
    omega: float,
    R: float,
    s: Sequence[float],
    mode: str = "both",
) -> TwistedIntegral:
    """``S_R = int_0^R exp(-2 pi i omega tau) f(h_tau(p, 0)) d tau``.

    ``mode="formula"`` multiplies profile transforms by twisted sums over the
    level-``ell`` word, after snapping ``R`` down to a level-``ell`` tile
    boundary.  ``mode="quadrature"`` integrates tile by tile along the
    level-0 itinerary.  ``"both"`` runs the two.
    """
    ell = f.level
    s = np.asarray(s, dtype=float)
    m = seq.m
    roof = np.asarray(level_roof(seq, s, ell), dtype=float)
    t0 = _level_start_offset(seq, p, s, ell)
    # level-ell letters from the tile containing p
    upper = seq.shift(ell)
    # no more letters than the shortest tile allows within time R
    cap = int((R + t0) / roof.min()) + 2
    xl = forward_word(upper, p.shift(ell), max_letters=cap)
    dur = roof[xl - 1]
    ends = np.cumsum(dur) - t0
    if ends[-1] < R * (1 - 1e-15):
        raise ValueError(f"path of depth {p.depth} reaches only time {ends[-1]:.6g} < R = {R}")
    nfull = int(np.searchsorted(ends, R, side="right"))
    R_snap = float(ends[nfull - 1]) if nfull > 0 else 0.0
    out = TwistedIntegral(R, R_snap, R - R_snap, None, None, None)

    if mode in ("formula", "both"):
        if not f.closed_form():
            raise TypeError("formula mode needs piecewise polynomial profiles")
        val = 0j
        if nfull > 0:
            first = xl[0]
            prof = f.profiles[first - 1]
            val += complex(prof.integral_exp(omega, t0, roof[first - 1])[0]) * np.exp(2j * np.pi * omega * t0)
            if nfull > 1:
                w = xl[1:nfull]
                starts = ends[0]
                Phi = phi_all(w, roof, omega, m) * np.exp(-2j * np.pi * omega * starts)
                for a in range(1, m + 1):
                    if Phi[a - 1] != 0:
                        val += f.profiles[a - 1].transform(omega) * Phi[a - 1]
        out.formula = val

    if mode in ("quadrature", "both"):
        out.quadrature = _quadrature(seq, p, f, omega, R, s, xl, t0, ell)
        out.quadrature_snapped = _quadrature(seq, p, f, omega, R_snap, s, xl, t0, ell) if R_snap > 0 else 0j
    return out


def _quadrature(seq, p, f, omega, R, s, xl, t0, ell) -> complex:
    """Integrate along level-0 tiles; each tile knows its level-``ell`` block."""
    ps = prefix_suffix(seq, p)
    # level-0 letters of the first level-ell block that precede p
    if ell > 0:
        left = [level_word(seq, ps[k][0], 1, k) for k in range(ell)]
        left = np.concatenate(left[::-1]).astype(np.int64)
    else:
        left = np.zeros(0, dtype=np.int64)
    lead = float(s[left - 1].sum()) if len(left) else 0.0
    # level-0 durations of whole level-ell blocks, from the level-0 words
    blocks = {int(y): (level_word(seq, [y], 1, ell) if ell > 0 else np.array([y], dtype=np.int32)) for y in np.unique(xl)}
    bdur = np.zeros(seq.m + 1)
    blen = np.zeros(seq.m + 1, dtype=np.int64)
    for y, blk in blocks.items():
        bdur[y] = s[blk - 1].sum()
        blen[y] = len(blk)
    reach = np.cumsum(bdur[xl]) - lead
    nb = min(int(np.searchsorted(reach, R, side="left")) + 1, len(xl))
    need_blocks = xl[:nb]
    w0 = level_word(seq, need_blocks, 1, ell).astype(np.int64) if ell > 0 else need_blocks.astype(np.int64)
    lens = blen[need_blocks]
    block_id = np.repeat(np.arange(nb), lens)
    d = s[w0 - 1]
    start = np.concatenate([[0.0], np.cumsum(d)[:-1]]) - lead  # time relative to p
    block_start = start[np.concatenate([[0], np.cumsum(lens)[:-1]])]
    offset = start - block_start[block_id]
    lo_t = np.maximum(start, 0.0)
    hi_t = np.minimum(start + d, R)
    keep = hi_t > lo_t
    lo_t, hi_t = lo_t[keep], hi_t[keep]
    off = offset[keep] + (lo_t - start[keep])
    letters = np.asarray(need_blocks)[block_id[keep]]
    total = 0j
    for a in np.unique(letters):
        sel = letters == a
        prof = f.profiles[a - 1]
        lo_u = off[sel]
        hi_u = lo_u + (hi_t[sel] - lo_t[sel])
        shift = lo_t[sel] - lo_u  # tau = shift + u
        if isinstance(prof, PiecewisePolynomial):
            vals = prof.integral_exp(omega, lo_u, hi_u)
        else:
            vals = _gauss_integral(prof, omega, lo_u, hi_u)
        total += complex((np.exp(-2j * np.pi * omega * shift) * vals).sum())
    return total


def growth_fit(R_grid: Sequence[float], values: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit of ``log|S_R| = log C1 + alpha log R``.

    Needs at least 8 samples spanning two decades of ``R``.
    """
    R_grid = np.asarray(R_grid, dtype=float)
    if len(R_grid) < 8 or R_grid.max() < 100 * R_grid.min():
        raise ValueError("growth_fit needs >= 8 samples spanning >= 2 decades")
    x = np.log(R_grid)
    y = np.log(np.maximum(np.abs(np.asarray(values)), 1e-300))
    alpha, logc = np.polyfit(x, y, 1)
    return float(alpha), float(math.exp(logc))


class LevelTiles:
    """Level-``ell`` tiles met by the flow from ``(p, 0)`` up to time ``T``."""

    def __init__(self, seq: SubstitutionSequence, p: PathPrefix, s, ell: int, T: float):
        s = np.asarray(s, dtype=float)
        self.ell = ell
        self.roof = np.asarray(level_roof(seq, s, ell), dtype=float)
        self.t0 = _level_start_offset(seq, p, s, ell)
        cap = int((T + self.t0) / self.roof.min()) + 2
        self.letters = forward_word(seq.shift(ell), p.shift(ell), max_letters=cap).astype(np.int64)
        self.ends = np.cumsum(self.roof[self.letters - 1]) - self.t0
        if self.ends[-1] < T * (1 - 1e-15):
            raise ValueError(f"path of depth {p.depth} reaches only time {self.ends[-1]:.6g} < {T}")

    def evaluate(self, f: CylindricalFunction, t: np.ndarray) -> np.ndarray:
        """``f(h_t(p, 0))`` for times ``0 <= t < T``."""
        t = np.asarray(t, dtype=float)
        j = np.searchsorted(self.ends, t, side="right")
        a = self.letters[j]
        local = t - (self.ends[j] - self.roof[a - 1])
        out = np.zeros(t.shape)
        for letter in np.unique(a):
            sel = a == letter
            out[sel] = f.profiles[letter - 1](local[sel])
        return out


def twisted_series(seq: SubstitutionSequence, p: PathPrefix, f: CylindricalFunction, omegas, R_grid,
                   s) -> tuple[np.ndarray, np.ndarray]:
    """Formula-route ``S_R`` on a grid: rows follow ``omegas``, columns ``R_grid``.

    Each ``R`` is snapped down to a level-``ell`` tile boundary, as in
    :func:`twisted_birkhoff`; the snapped values are returned alongside.
    """
    if not f.closed_form():
        raise TypeError("formula mode needs piecewise polynomial profiles")
    R_grid = np.asarray(R_grid, dtype=float)
    tiles = LevelTiles(seq, p, s, f.level, float(R_grid.max()))
    xl, ends, roof, t0 = tiles.letters, tiles.ends, tiles.roof, tiles.t0
    nfull = np.searchsorted(ends, R_grid, side="right")
    R_snap = np.where(nfull > 0, ends[np.maximum(nfull - 1, 0)], 0.0)
    last = int(nfull.max())
    starts = ends[:last] - roof[xl[:last] - 1]
    out = np.zeros((len(omegas), len(R_grid)), dtype=complex)
    first = xl[0]
    for i, omega in enumerate(omegas):
        hats = np.array([f.profiles[a].transform(omega) for a in range(seq.m)])
        contrib = hats[xl[:last] - 1] * np.exp(-2j * np.pi * omega * starts)
        contrib[0] = complex(f.profiles[first - 1].integral_exp(omega, t0, roof[first - 1])[0]) * np.exp(
            2j * np.pi * omega * t0)
        csum = np.cumsum(contrib)
        out[i] = np.where(nfull > 0, csum[np.maximum(nfull - 1, 0)], 0.0)
    return out, R_snap
