"""Integer parts of ``omega |zeta^[n](v)|_s``, their two-step prediction
from Oseledets data, covering counts, and the Salem/Pisot example."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy.special import gammaln, logsumexp

from .bv import SubstitutionSequence
from .cocycle import OseledetsFrame
from .rng import STREAM_EK, make_rng
from .substitution import Word, population_vector


class PrecisionError(ArithmeticError):
    pass


class SingularThetaError(ArithmeticError):
    pass


def _nearest(x: Fraction) -> int:
    """Nearest integer; halves go up."""
    return math.floor(x + Fraction(1, 2))


# --- K_n and eps_n ----------------------------------------------------------

def exact_tiling_value(seq: SubstitutionSequence, s, omega, word: Sequence[int], n: int) -> Fraction:
    """``omega |zeta^[n](word)|_s`` as an exact rational (floats taken at face value)."""
    pop = population_vector(word, seq.m)
    col = seq.prefix_product(n) @ np.array([int(c) for c in pop], dtype=object)  # population of zeta^[n](word)
    om = Fraction(omega)
    return om * sum((int(c) * Fraction(x) for c, x in zip(col, s)), start=Fraction(0))


def kn_sequence(seq: SubstitutionSequence, s, omega, returns: Sequence[Word] | Word, N: int | None = None,
                max_bits: int = 1 << 20) -> tuple[list[int], np.ndarray]:
    """``omega |zeta^[n](v_n)|_s = K_n + eps_n`` for ``n = 0..N``.

    ``returns`` is either one word used at every level or a list with one
    word per level.  ``K_n`` is exact; ``eps_n`` lies in ``[-1/2, 1/2)``.
    """
    N = len(seq) if N is None else N
    if returns and isinstance(returns[0], (int, np.integer)):
        words = [tuple(returns)] * (N + 1)
    else:
        words = [tuple(w) for w in returns]
        if len(words) < N + 1:
            raise ValueError(f"need {N + 1} words, got {len(words)}")
    K, eps = [], []
    for n in range(N + 1):
        x = exact_tiling_value(seq, s, omega, words[n], n)
        if x.denominator.bit_length() + abs(x.numerator).bit_length() > max_bits:
            raise PrecisionError(f"level {n} needs more than {max_bits} bits")
        k = _nearest(x)
        K.append(k)
        eps.append(float(x - k))
    return K, np.array(eps)


# --- Theta matrices ---------------------------------------------------------

@dataclass
class EKState:
    """Data for the two-step prediction of ``K_n``.

    ``Theta[n]`` is the 2x2 matrix with rows ``row(v_n, n)`` and
    ``row(v_{n+1}, n+1)`` where
    ``row(v, k) = (A(k,1) <l(v), e1[k]>, A(k,2) <l(v), e2[k]>)``.
    All entries are exact rationals so the prediction itself is exact.
    """

    K: list[int]
    eps: np.ndarray
    Theta: list  # list of 2x2 Fraction matrices (nested lists)
    M: np.ndarray
    rho: np.ndarray
    v: list = field(default_factory=list)
    xi: np.ndarray | None = None  # stable remainders, omega units
    det: np.ndarray | None = None
    det_normalized: np.ndarray | None = None

    def to_csv(self, predictions: list[tuple[int, int]] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "K_n", "eps_n", "rho_n", "M_n", "predicted_K", "match_flag"])
        for n in range(len(self.M)):
            pred = ""
            flag = ""
            if predictions is not None and n < len(predictions):
                pred = predictions[n][0]
                flag = int(n + 2 < len(self.K) and pred == self.K[n + 2])
            w.writerow([n, self.K[n], repr(float(self.eps[n])), repr(float(self.rho[n])), repr(float(self.M[n])),
                        pred, flag])
        return buf.getvalue()


def _frac2(M) -> list[list[Fraction]]:
    return [[Fraction(x) for x in row] for row in M]


def _inv2(M: list[list[Fraction]]) -> list[list[Fraction]]:
    (a, b), (c, d) = M
    det = a * d - b * c
    if det == 0:
        raise SingularThetaError("Theta is singular")
    return [[d / det, -b / det], [-c / det, a / det]]


def _mul2(A, B):
    return [[A[i][0] * B[0][j] + A[i][1] * B[1][j] for j in range(2)] for i in range(2)]


def transfer(Theta_n, Theta_next) -> list[list[Fraction]]:
    """``Theta_{n+1} Theta_n^{-1}`` in exact arithmetic."""
    return _mul2(_frac2(Theta_next), _inv2(_frac2(Theta_n)))


def _inf_norm(M) -> Fraction:
    return max(abs(M[i][0]) + abs(M[i][1]) for i in range(2))


def theta_sequence(frames: OseledetsFrame, returns: Sequence[Word], N: int, m: int | None = None):
    """Greedy words ``v_n`` and matrices ``Theta_n`` for ``n = 0..N-1``.

    ``v_0`` is the first basis word.  Given ``v_n``, the word ``v_{n+1}`` is
    the basis word maximizing ``|det Theta_n|``.  Returns
    ``(Theta, v, det, det_normalized, candidates)`` where ``candidates[n]``
    lists ``|det|`` for every basis word (for exhaustive re-checks).
    """
    m = m or frames.e1.shape[1]
    if len(frames.e1) < N + 1:
        raise ValueError(f"frames reach level {len(frames.e1) - 1} < {N}")
    pops = [population_vector(w, m) for w in returns]
    with mpmath.workprec(frames.precision_bits):
        def row(i: int, k: int):
            a1 = mpmath.exp(mpmath.mpf(frames.logA[k, 0]))
            a2 = mpmath.exp(mpmath.mpf(frames.logA[k, 1]))
            p = [int(c) for c in pops[i]]
            d1 = mpmath.fsum(c * x for c, x in zip(p, frames.e1_mp[k]))
            d2 = mpmath.fsum(c * x for c, x in zip(p, frames.e2_mp[k]))
            return [_mp_fraction(a1 * d1), _mp_fraction(a2 * d2)]

        v = [0]
        Thetas, dets, dnorm, cands = [], [], [], []
        for n in range(N):
            r0 = row(v[n], n)
            best, best_det, best_row, all_d = None, Fraction(-1), None, []
            for i in range(len(returns)):
                r1 = row(i, n + 1)
                d = abs(r0[0] * r1[1] - r0[1] * r1[0])
                all_d.append(float(d))
                if d > best_det:
                    best, best_det, best_row = i, d, r1
            v.append(best)
            Thetas.append([r0, best_row])
            dets.append(float(best_det))
            scale = math.exp(frames.logA[n, 0] + frames.logA[n + 1, 1])
            dnorm.append(float(best_det) / scale)
            cands.append(all_d)
    return Thetas, [tuple(returns[i]) for i in v], np.array(dets), np.array(dnorm), cands


def _mp_fraction(x) -> Fraction:
    man, exp = mpmath.mpf(x).man_exp
    man = int(man)
    return Fraction(man * 2**exp) if exp >= 0 else Fraction(man, 2 ** (-exp))


def stable_remainders(frames: OseledetsFrame, seq: SubstitutionSequence, s, omega, words: Sequence[Word],
                      N: int) -> np.ndarray:
    """``xi_n``: ``|zeta^[n](v_n)|_s`` minus its two-frame reconstruction.

    ``s`` is split as ``a1 e1[0] + a2 e2[0] + (stable part)``.
    """
    m = seq.m
    with mpmath.workprec(frames.precision_bits):
        basis = mpmath.matrix(m, m)
        for i in range(m):
            basis[i, 0] = frames.e1_mp[0][i]
            basis[i, 1] = frames.e2_mp[0][i]
            for j in range(m - 2):
                basis[i, 2 + j] = frames.stable_mp[j][i]
        coef = mpmath.lu_solve(basis, mpmath.matrix([mpmath.mpf(float(x)) for x in s]))
        a1, a2 = coef[0], coef[1]
        out = []
        for n in range(N + 1):
            pop = [int(c) for c in population_vector(words[n], m)]
            exact = mpmath.mpf(_as_mpf(exact_tiling_value(seq, s, 1, words[n], n)))
            rec = (a1 * mpmath.exp(frames.logA[n, 0]) * mpmath.fsum(c * x for c, x in zip(pop, frames.e1_mp[n]))
                   + a2 * mpmath.exp(frames.logA[n, 1]) * mpmath.fsum(c * x for c, x in zip(pop, frames.e2_mp[n])))
            out.append(float(mpmath.mpf(omega) * (exact - rec)))
    return np.array(out)


def _as_mpf(x: Fraction):
    return mpmath.mpf(x.numerator) / x.denominator


def ek_state(seq: SubstitutionSequence, s, omega, frames: OseledetsFrame, returns: Sequence[Word],
             N: int | None = None) -> EKState:
    """Assemble ``K_n``, ``eps_n``, ``Theta_n``, ``M_n`` and ``rho_n`` along a run.

    ``M_n = 1 + ||Theta_{n+1} Theta_n^{-1}||_inf`` is the measured transfer
    norm, so ``rho_n = 1 / (4 M_n)``.
    """
    N = (len(frames.e1) - 2) if N is None else N
    Thetas, words, det, dnorm, _ = theta_sequence(frames, returns, N, seq.m)
    K, eps = kn_sequence(seq, s, omega, words, N)
    scaled = [[[Fraction(omega) * x for x in row] for row in T] for T in Thetas]
    M = np.array([1 + float(_inf_norm(transfer(scaled[n], scaled[n + 1]))) for n in range(N - 1)])
    xi = stable_remainders(frames, seq, s, omega, words, N)
    return EKState(K, eps, scaled, M, 1 / (4 * M), words, xi, det, dnorm)


def ek_predict(state: EKState, n: int) -> tuple[int, int]:
    """``(K_pred, branch_count)`` for ``K_{n+2}`` from ``K_n`` and ``K_{n+1}``."""
    P = transfer(state.Theta[n], state.Theta[n + 1])
    y = P[1][0] * state.K[n] + P[1][1] * state.K[n + 1]
    return _nearest(y), 2 * math.ceil(state.M[n]) + 1


def measured_c_zeta(state: EKState, W: np.ndarray) -> float:
    """Smallest ``C`` with ``M_n - 1 <= C exp(2 (W_n + W_{n+1}))`` along the run."""
    W = np.asarray(W, dtype=float)
    k = min(len(state.M), len(W) - 1)
    return float(np.max((state.M[:k] - 1) / np.exp(2 * (W[:k] + W[1 : k + 1]))))


def constructed_instance(rng: np.random.Generator, growth: float = 8.0, eps_fraction: float = 0.5,
                         max_tries: int = 10_000) -> EKState:
    """Random three-level instance with ``xi = 0`` and ``|eps| < eps_fraction * rho_0``.

    Rows are random rationals growing like ``growth**k``; ``a`` solves
    ``Theta_0 a = K + eps`` for random ``K`` and small ``eps``; the third
    value ``r_2 . a`` is accepted only if its own ``eps`` is small as well.
    """
    def rnd(scale):
        return Fraction(int(rng.integers(-2**40, 2**40)), 2**40) * Fraction(scale).limit_denominator(2**20)

    for _ in range(max_tries):
        rows = [[rnd(growth**k) + growth**k, rnd(growth**k)] for k in range(3)]
        T0, T1 = [rows[0], rows[1]], [rows[1], rows[2]]
        try:
            P = transfer(T0, T1)
        except SingularThetaError:
            continue
        M = 1 + float(_inf_norm(P))
        rho = 1 / (4 * M)
        lim = Fraction(eps_fraction * rho).limit_denominator(2**30)
        for _ in range(64):
            K = [int(rng.integers(-10**6, 10**6)) for _ in range(2)]
            e = [lim * Fraction(int(rng.integers(-2**20 + 1, 2**20)), 2**20) for _ in range(2)]
            Tinv = _inv2(T0)
            target = [K[0] + e[0], K[1] + e[1]]
            a = [Tinv[i][0] * target[0] + Tinv[i][1] * target[1] for i in range(2)]
            x2 = rows[2][0] * a[0] + rows[2][1] * a[1]
            k2 = _nearest(x2)
            e2 = x2 - k2
            if abs(e2) < lim:
                eps = np.array([float(e[0]), float(e[1]), float(e2)])
                return EKState(K + [k2], eps, [T0, T1], np.array([M]), np.array([rho]), xi=np.zeros(3))
    raise RuntimeError("could not construct an instance")


def constructed_instances(seed: int, count: int, **kw) -> list[EKState]:
    rng = make_rng(seed, STREAM_EK)
    return [constructed_instance(rng, **kw) for _ in range(count)]


# --- covering counts --------------------------------------------------------

@dataclass
class CoveringEstimate:
    log_count: float
    dim_bound: float
    log_binomial: float
    log_branches: float
    stirling_log: float  # log of exp(C' delta log(1/delta) N)
    worst_levels: int


def log_binomial_sum(N: int, delta: float) -> float:
    """``log sum_{i < delta N} C(N, i)`` via log-Gamma."""
    i = np.arange(0, math.ceil(delta * N))
    if len(i) == 0:
        return -math.inf
    terms = gammaln(N + 1) - gammaln(i + 1) - gammaln(N - i + 1)
    return float(logsumexp(terms))


def covering_estimate(W: np.ndarray, N: int, delta: float, C_zeta: float, theta2: float,
                      delta1: float | None = None, C_prime: float = 2.0) -> CoveringEstimate:
    """Log of the number of admissible ``K`` sequences of length ``N`` and the
    resulting dimension bound.

    Fewer than ``delta N`` levels may be exceptional; at each of them up to
    ``2 M_n + 1`` branches are allowed, with
    ``M_n = 1 + C_zeta exp(2 (W_n + W_{n+1}))``.  The worst
    ``ceil(delta N) - 1`` levels are charged.  The dimension bound divides by
    ``(theta2 - delta1) N``, the log of the inverse ball radius.
    """
    if not 0 < delta < math.exp(-1):
        raise ValueError("delta must lie in (0, 1/e)")
    W = np.asarray(W, dtype=float)
    if len(W) < N + 1:
        raise ValueError(f"need W_0..W_N ({N + 1} values)")
    delta1 = theta2 / 10 if delta1 is None else delta1
    if theta2 - delta1 <= 0:
        raise ValueError("theta2 - delta1 must be positive")
    M = 1 + C_zeta * np.exp(2 * (W[:N] + W[1 : N + 1]))
    k = max(math.ceil(delta * N) - 1, 0)
    log_br = float(np.sort(np.log(2 * M + 1))[::-1][:k].sum())
    log_bin = log_binomial_sum(N, delta)
    log_count = log_bin + log_br
    return CoveringEstimate(log_count, log_count / ((theta2 - delta1) * N), log_bin, log_br,
                            C_prime * delta * math.log(1 / delta) * N, k)


# --- Salem / Pisot ----------------------------------------------------------

@dataclass
class SalemResult:
    lam: object
    alpha: object
    K: list[int]
    eps: np.ndarray
    eps_mp: list  # full-precision values
    ratios: np.ndarray  # K_{n+1} / K_n
    precision_bits: int
    fourier: Callable = field(repr=False)


def _parse_real(x, prec_bits: int):
    """Number, Fraction or expression string -> Fraction when rational, else mpf."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        import sympy

        expr = sympy.sympify(x)
        if expr.is_Rational:
            return Fraction(int(expr.p), int(expr.q))
        dps = int(prec_bits * 0.30103) + 10
        with mpmath.workprec(prec_bits):
            return mpmath.mpf(str(sympy.N(expr, dps)))
    if isinstance(x, float):
        return Fraction(x)
    with mpmath.workprec(prec_bits):
        return mpmath.mpf(x)


def salem_demo(lam, alpha=1, N: int = 40, extra_bits: int = 128) -> SalemResult:
    """``alpha lam^n = K_n + eps_n`` for ``n = 0..N`` in extended precision.

    Rational inputs are handled exactly.  ``fourier(t)`` is
    ``prod_{n=0}^{N} cos(2 pi lam^{-n} t)``.
    """
    prec = extra_bits + 64
    lam0 = _parse_real(lam, prec)
    if lam0 <= 1:
        raise ValueError("lambda must exceed 1")
    prec = extra_bits + int(N * math.log2(float(lam0))) + 64
    lam_v = _parse_real(lam, prec)
    alpha_v = _parse_real(alpha, prec)
    K, eps_mp = [], []
    with mpmath.workprec(prec):
        if isinstance(lam_v, Fraction) and isinstance(alpha_v, Fraction):
            x = alpha_v
            for _ in range(N + 1):
                k = _nearest(x)
                K.append(k)
                eps_mp.append(mpmath.mpf(x.numerator - k * x.denominator) / x.denominator)
                x *= lam_v
        else:
            lam_m = _as_mpf(lam_v) if isinstance(lam_v, Fraction) else lam_v
            x = _as_mpf(alpha_v) if isinstance(alpha_v, Fraction) else alpha_v
            for _ in range(N + 1):
                k = int(mpmath.floor(x + mpmath.mpf(1) / 2))
                K.append(k)
                eps_mp.append(x - k)
                x *= lam_m
        lam_f = float(lam_v)
    ratios = np.array([K[n + 1] / K[n] if K[n] else np.nan for n in range(N)])
    inv = lam_f ** -np.arange(N + 1)

    def fourier(t):
        t = np.asarray(t, dtype=float)
        return np.prod(np.cos(2 * np.pi * np.multiply.outer(t, inv)), axis=-1)

    return SalemResult(lam_v, alpha_v, K, np.array([float(e) for e in eps_mp]), eps_mp, ratios, prec, fourier)

