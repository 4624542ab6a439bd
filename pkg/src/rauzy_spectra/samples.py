"""Random renormalization data on the Rauzy class of (4,3,2,1).

Along a typical Rauzy-Veech path the doubled marker ``q.q`` is far too rare
to observe in any feasible run (its cylinder has measure near 1e-11).  The
canonical samples are therefore spliced: the natural induction path of a
Lebesgue-random IET is cut at its returns to the start vertex, and each
segment ``p_n`` is wrapped as the block ``q p_n q``.  The resulting path is
a concatenation of loops at the start vertex, its substitution sequence is
canonical by construction (``zeta_n = zeta(q) o zeta(p_n) o zeta(q)``), and
the length vectors along it are recovered by backward iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .bv import SubstitutionSequence, canonical_sequence
from .cocycle import ReturnTimes, eps_fit, EPS_GRID
from .iet import IET, CanonicalLoop, find_positive_simple_loop, path_substitution, rauzy_class, rauzy_kinds, sample_iet
from .rng import sample_roof

H2_PERM = (4, 3, 2, 1)


@lru_cache(maxsize=None)
def marker_loop(pi: tuple = H2_PERM) -> CanonicalLoop:
    return find_positive_simple_loop(tuple(pi))


def natural_segments(T: IET, n_segments: int, returns_per_segment: int = 1, max_steps: int = 10_000_000) -> list[str]:
    """Cut the induction path of ``T`` at its returns to the start vertex."""
    C = rauzy_class(T.pi, labelled=True)
    v0 = T.perm
    if v0 != C.start:
        raise ValueError("T must start at the class base vertex")
    out: list[str] = []
    cur: list[str] = []
    hits = 0
    v = v0
    for kind, _, _ in rauzy_kinds(T, max_steps):
        cur.append(kind)
        v = C.edges[(v, kind)]
        if v == v0:
            hits += 1
            if hits == returns_per_segment:
                out.append("".join(cur))
                cur, hits = [], 0
                if len(out) == n_segments:
                    return out
    raise ValueError(f"only {len(out)} segments within {max_steps} steps")


@dataclass
class CanonicalSample:
    seed: int
    loop: CanonicalLoop
    segments: list[str]
    seq: SubstitutionSequence
    s: np.ndarray  # roof vector, ||s||_1 = 1
    lam: np.ndarray = field(repr=False)  # (N+1, m) normalized lengths at block boundaries
    log_scale: np.ndarray = field(repr=False)  # per-block log |Lambda| increments

    @property
    def kinds(self) -> str:
        q = self.loop.word
        return "".join(q + p + q for p in self.segments)


def block_lengths(seq: SubstitutionSequence, end: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Backward recursion ``lam_{n-1} = S_n lam_n / |S_n lam_n|``.

    Returns the normalized vectors and the log-norm increments.  Positive
    blocks contract the projective simplex, so the start vector is pinned
    down to float precision after a few blocks whatever ``end`` is.
    """
    N, m = len(seq), seq.m
    lam = np.empty((N + 1, m))
    lam[N] = np.full(m, 1.0 / m) if end is None else np.asarray(end, float) / np.sum(end)
    incr = np.empty(N)
    for n in range(N, 0, -1):
        y = np.asarray(seq.matrix(n), dtype=float) @ lam[n]
        tot = y.sum()
        lam[n - 1] = y / tot
        incr[n - 1] = np.log(tot)
    return lam, incr


def canonical_sample(seed: int, n_blocks: int, pi=H2_PERM, returns_per_block: int = 1) -> CanonicalSample:
    """Spliced canonical sample started from a Lebesgue-random IET with permutation ``pi``."""
    loop = marker_loop(tuple(pi))
    T = sample_iet(pi, seed)
    segs = natural_segments(T, n_blocks, returns_per_block)
    xis = [path_substitution(loop.vertex, p)[0] for p in segs]
    seq = canonical_sequence(loop.substitution, xis)
    lam, incr = block_lengths(seq)
    return CanonicalSample(seed, loop, segs, seq, sample_roof(seed, seq.m), lam, incr)


def h2_canonical_sample(seed: int, n_blocks: int, returns_per_block: int = 1) -> CanonicalSample:
    return canonical_sample(seed, n_blocks, H2_PERM, returns_per_block)


def block_return_times(sample: CanonicalSample) -> ReturnTimes:
    """Return statistics of ``q.q`` at the block boundaries of a spliced sample."""
    k = len(sample.loop.word)
    gaps = np.array([2 * k + len(p) for p in sample.segments])
    best, means, stable = eps_fit(sample.log_scale)
    return ReturnTimes(gaps, sample.log_scale.copy(), best, EPS_GRID, means, stable)
