"""Renormalization cocycle: Lyapunov exponents, Oseledets frames, norm
statistics of canonical steps and return times of a loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import mpmath
import numpy as np

from .bv import SubstitutionSequence
from .iet import IET, RauzyPath, is_simple, rauzy_kinds
from .substitution import integer_det

REORTHO_THRESHOLD = 2.0**100


class SingularStepError(ArithmeticError):
    pass


class GapTestError(ArithmeticError):
    """Top two exponents are not separated."""


class InsufficientDataError(ValueError):
    pass


@dataclass
class LyapunovEstimate:
    theta: np.ndarray
    stderr: np.ndarray
    n_steps: int
    increments: np.ndarray = field(repr=False, default=None)  # per-checkpoint log R_ii

    def to_json(self, seed=None) -> dict:
        return {"theta": [float(x) for x in self.theta], "stderr": [float(x) for x in self.stderr],
                "n": int(self.n_steps), "seed": seed}


def _batch_stderr(incr: np.ndarray, n_steps: int, batches: int = 32) -> np.ndarray:
    """Standard error of the per-step exponent from batch means of checkpoint increments."""
    nb = min(batches, len(incr))
    if nb < 2:
        return np.full(incr.shape[1], np.inf)
    usable = (len(incr) // nb) * nb
    sums = incr[:usable].reshape(nb, -1, incr.shape[1]).sum(axis=1)
    steps_per_batch = n_steps * usable / len(incr) / nb
    rates = sums / steps_per_batch
    return rates.std(axis=0, ddof=1) / math.sqrt(nb)


def lyapunov_spectrum(matrix_stream: Iterable[np.ndarray], n: int, checkpoint_every: int = 8,
                      batches: int = 32, seed: int = 0) -> LyapunovEstimate:
    """Exponents of ``A_n ... A_1`` by QR re-orthonormalization.

    The frame is re-orthonormalized every ``checkpoint_every`` steps (and
    earlier if a column norm exceeds 2**100).
    """
    if n < 10 * checkpoint_every:
        raise ValueError("need n >= 10 * checkpoint_every")
    it = iter(matrix_stream)
    Q = None
    incr = []
    acc = None
    k = 0
    since = 0
    for A in it:
        if k == n:
            break
        A = np.asarray(A, dtype=float)
        if Q is None:
            d = A.shape[0]
            Q = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))[0]
            acc = np.zeros(d)
        Q = A @ Q
        k += 1
        since += 1
        if since == checkpoint_every or k == n or np.abs(Q).max() > REORTHO_THRESHOLD:
            Q, R = np.linalg.qr(Q)
            diag = np.abs(np.diag(R))
            if np.any(diag == 0):
                raise SingularStepError(f"singular product at step {k}")
            acc = acc + np.log(diag)
            if since == checkpoint_every or k == n:
                incr.append(acc)
                acc = np.zeros(len(diag))
                since = 0
    if k < n:
        raise ValueError(f"stream ended after {k} of {n} steps")
    incr = np.array(incr)
    theta = incr.sum(axis=0) / n
    return LyapunovEstimate(theta, _batch_stderr(incr, n, batches), n, incr)


def rauzy_lyapunov(T: IET, n: int, checkpoint_every: int = 8, batches: int = 32, seed: int = 0) -> LyapunovEstimate:
    """Lyapunov exponents of the Rauzy-Veech cocycle along ``n`` steps from ``T``.

    Same algorithm as :func:`lyapunov_spectrum`; each cocycle matrix
    ``I + E[loser, winner]`` acts as a single row addition.
    """
    if n < 10 * checkpoint_every:
        raise ValueError("need n >= 10 * checkpoint_every")
    d = T.m
    Q0 = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))[0]
    rows = [None] + [list(r) for r in Q0]  # 1-based row index by label
    incr = []
    since = 0
    k = 0
    for _, w, l in rauzy_kinds(T, n):
        rl, rw = rows[l], rows[w]
        for j in range(d):
            rl[j] += rw[j]
        k += 1
        since += 1
        if since == checkpoint_every or k == n:
            Q, R = np.linalg.qr(np.array(rows[1:]))
            incr.append(np.log(np.abs(np.diag(R))))
            rows = [None] + Q.tolist()
            since = 0
    incr = np.array(incr)
    theta = incr.sum(axis=0) / n
    return LyapunovEstimate(theta, _batch_stderr(incr, n, batches), n, incr)


def rauzy_cocycle_matrices(T: IET, n: int):
    """Stream of cocycle matrices ``A_k^t`` along the induction of ``T``."""
    d = T.m
    for _, w, l in rauzy_kinds(T, n):
        A = np.eye(d)
        A[l - 1, w - 1] = 1.0
        yield A


def check_unimodular(matrices: Sequence[np.ndarray], n: int = 40) -> bool:
    """``|det|`` of the first ``n`` partial products is exactly 1."""
    P = None
    for A in matrices[:n]:
        A = np.asarray(A).astype(object)
        P = A if P is None else A @ P
        if abs(integer_det(P.tolist())) != 1:
            return False
    return True


# --- norms and W statistics -------------------------------------------------

def matrix_norm2(A: np.ndarray, rtol: float = 1e-12, max_iter: int = 10_000) -> float:
    """Euclidean operator norm by power iteration on ``A^t A``."""
    A = np.asarray(A, dtype=float)
    scale = np.abs(A).max()
    if scale == 0:
        return 0.0
    B = A / scale
    x = np.ones(B.shape[1]) / math.sqrt(B.shape[1])
    prev = 0.0
    for _ in range(max_iter):
        y = B.T @ (B @ x)
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
        if abs(lam - prev) <= rtol * lam:
            break
        prev = lam
    return scale * math.sqrt(lam)


@dataclass
class WStatistics:
    W: np.ndarray

    def top_sum(self, k: int) -> float:
        return float(np.sort(self.W)[::-1][:k].sum())

    def ld_stat(self, delta: float) -> float:
        """``(sum of the ceil(delta N) largest W_n) / (delta N log(1/delta))``."""
        N = len(self.W)
        k = math.ceil(delta * N)
        return self.top_sum(k) / (delta * N * math.log(1.0 / delta))


def w_statistics(seq: SubstitutionSequence) -> WStatistics:
    """``W_n = log ||A(a_n)||`` for each canonical step, ``A(a_n) = S_n^t``."""
    if seq.canonical is None:
        raise ValueError("w_statistics needs a canonical sequence")
    W = np.array([math.log(matrix_norm2(np.asarray(seq.matrix(n), dtype=float).T)) for n in range(1, len(seq) + 1)])
    return WStatistics(W)


# --- Oseledets frames -------------------------------------------------------

@dataclass
class OseledetsFrame:
    """Unit vectors ``e1[n], e2[n]`` with ``A(n) e_j[0] = exp(logA[n, j]) e_j[n]``."""

    e1: np.ndarray  # (N+1, m)
    e2: np.ndarray
    logA: np.ndarray  # (N+1, 2)
    residual: np.ndarray  # (N+1, 2) relative reconstruction residuals
    min_angle: float
    theta: np.ndarray
    stderr: np.ndarray
    stable: np.ndarray  # (m, m-2) basis of the complement used to split s
    precision_bits: int
    e1_mp: list = field(repr=False, default=None)
    e2_mp: list = field(repr=False, default=None)
    stable_mp: list = field(repr=False, default=None)  # rows span the complement


def _mp_normalize(v):
    n = mpmath.sqrt(mpmath.fsum(x * x for x in v))
    return [x / n for x in v], n


def _mp_gram_schmidt(cols):
    out = []
    for v in cols:
        w = list(v)
        for u in out:
            c = mpmath.fsum(a * b for a, b in zip(w, u))
            w = [a - c * b for a, b in zip(w, u)]
        out.append(_mp_normalize(w)[0])
    return out


def oseledets_frames(seq: SubstitutionSequence, n: int | None = None, precision_bits: int | None = None,
                     gap_sigmas: float = 5.0, check_gap: bool = True) -> OseledetsFrame:
    """Top two Oseledets directions along the cocycle ``A(k) = S_k^t``.

    ``e1[0]`` is the normalized all-ones vector pushed through the cocycle,
    so ``e1[n]`` stays in the positive cone.  ``e2[0]`` is the second right
    singular direction of the full product ``A(N) ... A(1)``, which lies in
    the slow subspace up to an error that shrinks like
    ``exp(-(theta1 - theta2) N)``; ``e2[n]`` is its pushforward.  The
    complement spanned by the remaining singular directions is returned as
    ``stable`` (used to split a roof vector).  Everything runs in ``mpmath``
    at ``precision_bits``.
    """
    N = len(seq) if n is None else n
    m = seq.m
    mats = [np.asarray(seq.matrix(k)).T for k in range(1, N + 1)]
    est = lyapunov_spectrum(_cycle(mats, 10), 10 * N, checkpoint_every=1, batches=min(16, N))
    if check_gap and not est.theta[0] - est.theta[1] > gap_sigmas * est.stderr[:2].max():
        raise GapTestError(f"theta1 - theta2 = {est.theta[0] - est.theta[1]:.4g} "
                           f"not above {gap_sigmas} x stderr {est.stderr[:2].max():.3g}")
    total = seq.prefix_product(N).T  # A(N) ... A(1) = (S^[N])^t
    growth = max(int(x) for x in np.asarray(total).ravel())
    if precision_bits is None:
        precision_bits = 2 * growth.bit_length() + 128
    with mpmath.workprec(precision_bits):
        Amp = mpmath.matrix([[mpmath.mpf(int(x)) for x in row] for row in total.tolist()])
        U, S, V = mpmath.svd_r(Amp)
        v = [[V[i, j] for j in range(m)] for i in range(m)]  # rows are right singular vectors
        e1_0, _ = _mp_normalize([mpmath.mpf(1)] * m)
        e2_0 = list(v[1])
        # orient e2 so that its pushforward is comparable across levels
        if mpmath.fsum(e2_0) < 0:
            e2_0 = [-x for x in e2_0]
        stable = [list(v[i]) for i in range(2, m)]
        e1s, e2s, logA = [e1_0], [e2_0], [(0.0, 0.0)]
        x1, x2 = list(e1_0), list(e2_0)
        l1 = l2 = mpmath.mpf(0)
        for k in range(1, N + 1):
            A = mats[k - 1]
            x1 = [mpmath.fsum(int(A[i, j]) * x1[j] for j in range(m)) for i in range(m)]
            x2 = [mpmath.fsum(int(A[i, j]) * x2[j] for j in range(m)) for i in range(m)]
            x1, n1 = _mp_normalize(x1)
            x2, n2 = _mp_normalize(x2)
            l1 += mpmath.log(n1)
            l2 += mpmath.log(n2)
            e1s.append(x1)
            e2s.append(x2)
            logA.append((float(l1), float(l2)))
        # direct check of A(n) e_j[0] = A(n, j) e_j[n] on the exact products
        residual = np.zeros((N + 1, 2))
        for k in range(1, N + 1):
            P = seq.prefix_product(k).T
            for j, (e0, ek) in enumerate(((e1_0, e1s[k]), (e2_0, e2s[k]))):
                y = [mpmath.fsum(int(P[i, c]) * e0[c] for c in range(m)) for i in range(m)]
                a = mpmath.exp(logA[k][j])
                r = mpmath.sqrt(mpmath.fsum((yi - a * ei) ** 2 for yi, ei in zip(y, ek)))
                residual[k, j] = float(r / a)
        E1 = np.array([[float(x) for x in e] for e in e1s])
        E2 = np.array([[float(x) for x in e] for e in e2s])
    cosang = np.abs(np.sum(E1 * E2, axis=1))
    min_angle = float(np.arccos(np.clip(cosang.max(), 0, 1)))
    return OseledetsFrame(E1, E2, np.array(logA), residual, min_angle, est.theta, est.stderr,
                          np.array([[float(x) for x in r] for r in stable]).T, precision_bits, e1s, e2s, stable)


def _cycle(mats, reps):
    for _ in range(reps):
        yield from mats


# --- return times -----------------------------------------------------------

@dataclass
class ReturnTimes:
    gaps: np.ndarray  # steps between successive q.q occurrences
    L: np.ndarray  # log |Lambda| increments between occurrences
    eps_fit: float
    eps_grid: np.ndarray
    means: np.ndarray  # empirical E exp(eps L) on the grid
    stable: np.ndarray  # bool per grid point


EPS_GRID = np.geomspace(1e-3, 1.0, 25)


def qq_occurrences(kinds: str, q: str, vertices: Sequence | None = None, start_vertex=None) -> list[int]:
    """Step indices ``t`` where ``kinds[t - |q| : t + |q|] == q + q``.

    The returned index is the position of the dot in ``q.q``.  When
    ``vertices`` is given, the occurrence must start at ``start_vertex``.
    """
    k = len(q)
    qq = q + q
    out = []
    i = kinds.find(qq)
    while i != -1:
        if vertices is None or vertices[i] == start_vertex:
            out.append(i + k)
        i = kinds.find(qq, i + 1)
    return out


def eps_fit(L: np.ndarray, grid: np.ndarray = EPS_GRID, tol: float = 0.10) -> tuple[float, np.ndarray, np.ndarray]:
    """Largest grid ``eps`` whose empirical mean of ``exp(eps L)`` is finite and
    changes by less than ``tol`` when the sample is halved."""
    L = np.asarray(L, dtype=float)
    half = L[: len(L) // 2]
    means = np.array([np.mean(np.exp(e * L)) for e in grid])
    means_half = np.array([np.mean(np.exp(e * half)) for e in grid])
    with np.errstate(invalid="ignore"):
        stable = np.isfinite(means) & np.isfinite(means_half) & (np.abs(means_half - means) < tol * np.abs(means))
    best = 0.0
    for e, ok in zip(grid, stable):
        if not ok:
            break
        best = float(e)
    return best, means, stable


def return_time_stats(path: RauzyPath, q: str, start_vertex=None, min_count: int = 30) -> ReturnTimes:
    """Gaps between occurrences of ``q.q`` and the Teichmuller time spent."""
    if not is_simple(q):
        raise ValueError(f"{q!r} overlaps itself")
    verts = [it.perm for it in path.iets] if start_vertex is not None else None
    occ = qq_occurrences(path.kinds, q, verts, start_vertex)
    if len(occ) < min_count + 1:
        raise InsufficientDataError(f"only {len(occ)} occurrences of q.q (need {min_count + 1})")
    occ = np.array(occ)
    gaps = np.diff(occ)
    LL = np.asarray(path.log_lambda)
    L = LL[occ[1:]] - LL[occ[:-1]]
    best, means, stable = eps_fit(L)
    return ReturnTimes(gaps, L, best, EPS_GRID, means, stable)
