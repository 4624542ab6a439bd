"""S-adic sequences of substitutions and their Bratteli-Vershik description.

A sequence ``zeta_1, zeta_2, ...`` is stored 1-based: ``seq[n]`` is
``zeta_n`` and ``seq.product(n1, n2)`` is the matrix of
``zeta_{n1} o ... o zeta_{n2}``.  Level ``n`` words are
``zeta^[n](b) = zeta_1 o ... o zeta_n (b)``, of length ``h^(n)_b``.

A path prefix of depth ``n`` is a top vertex ``b_n`` together with positional
edge indices ``e_1, ..., e_n`` (0-based) such that ``b_{k-1}`` is the letter
at position ``e_k`` of ``zeta_k(b_k)``.  It marks one letter of the level-0
word ``zeta^[n](b_n)``.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .substitution import (
    MAX_WORD_LENGTH,
    MaterializationError,
    Substitution,
    compose_all,
    subst_matrix,
)


class ConvergenceError(ArithmeticError):
    pass


class MaximalPathError(ValueError):
    """The Vershik successor of a maximal path is undefined."""


class ItineraryTooShort(ValueError):
    pass


class CanonicalFormError(ValueError):
    pass


@dataclass(frozen=True)
class CanonicalMarker:
    """Each step equals ``q o xi_n o q``."""

    q: Substitution
    xi: tuple[Substitution, ...]


def _int_matrix(S) -> np.ndarray:
    return np.array([[int(x) for x in row] for row in np.asarray(S)], dtype=object)


class SubstitutionSequence:
    """Finite sequence of substitutions on a common alphabet."""

    def __init__(self, steps: Sequence[Substitution], canonical: CanonicalMarker | None = None):
        steps = tuple(steps)
        if not steps:
            raise ValueError("empty sequence")
        m = steps[0].m
        if any(z.m != m for z in steps):
            raise ValueError("all substitutions must share the alphabet")
        self.steps = steps
        self.m = m
        self.canonical = canonical
        if canonical is not None and len(canonical.xi) != len(steps):
            raise CanonicalFormError("canonical marker length mismatch")
        self._lock = threading.Lock()
        self._mats = [_int_matrix(subst_matrix(z)) for z in steps]
        self._prefix = [np.eye(m, dtype=int).astype(object)]

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, n: int) -> Substitution:
        if not 1 <= n <= len(self.steps):
            raise IndexError(n)
        return self.steps[n - 1]

    def matrix(self, n: int) -> np.ndarray:
        """``S_n`` as an object array of Python ints."""
        return self._mats[n - 1]

    def prefix_product(self, n: int) -> np.ndarray:
        """``S^[n] = S_1 ... S_n`` (exact)."""
        if n > len(self.steps):
            raise IndexError(n)
        with self._lock:
            while len(self._prefix) <= n:
                k = len(self._prefix)
                self._prefix.append(self._prefix[-1] @ self._mats[k - 1])
            return self._prefix[n]

    def product(self, n1: int, n2: int) -> np.ndarray:
        """``S_{n1} ... S_{n2}``; the identity when ``n2 < n1``."""
        P = np.eye(self.m, dtype=int).astype(object)
        for k in range(n1, n2 + 1):
            P = P @ self._mats[k - 1]
        return P

    def heights(self, n: int) -> np.ndarray:
        """``h^(n)_b = |zeta^[n](b)|``, the column sums of ``S^[n]``."""
        return self.prefix_product(n).sum(axis=0)

    def composed(self, n1: int, n2: int) -> Substitution:
        return compose_all(list(self.steps[n1 - 1 : n2]), self.m)

    def shift(self, ell: int) -> "SubstitutionSequence":
        """The sequence ``zeta_{ell+1}, zeta_{ell+2}, ...``."""
        canon = None
        if self.canonical is not None:
            canon = CanonicalMarker(self.canonical.q, self.canonical.xi[ell:])
        return SubstitutionSequence(self.steps[ell:], canon)

    def to_json(self) -> dict:
        out = {"m": self.m, "steps": [z.to_json() for z in self.steps]}
        if self.canonical is not None:
            out["canonical"] = {
                "q": self.canonical.q.to_json(),
                "xi": [x.to_json() for x in self.canonical.xi],
            }
        return out

    @classmethod
    def from_json(cls, obj) -> "SubstitutionSequence":
        if isinstance(obj, str):
            obj = json.loads(obj)
        steps = [Substitution.from_json(z) for z in obj["steps"]]
        canon = None
        if obj.get("canonical"):
            c = obj["canonical"]
            canon = CanonicalMarker(
                Substitution.from_json(c["q"]), tuple(Substitution.from_json(x) for x in c["xi"])
            )
        return cls(steps, canon)


def level_roof(seq: SubstitutionSequence, s: Sequence, ell: int) -> np.ndarray:
    """``s^(ell) = (S^[ell])^t s``; the tile lengths of level-``ell`` letters."""
    P = seq.prefix_product(ell)
    s = np.asarray(s)
    if s.dtype == object:
        return P.T @ s
    return (P.T.astype(float)) @ s.astype(float)


# --- invariant measure ------------------------------------------------------

@dataclass
class InvariantMeasure:
    z: list  # z[ell] for ell = 0..depth, floats
    gap: float  # l1 diameter of the normalized columns of S^[depth]
    depth: int

    def cylinder_mass(self, p: "PathPrefix") -> float:
        """Mass of the cylinder of paths through ``p``'s last vertex."""
        return float(self.z[p.depth][p.top - 1])


def _column_gap(P: np.ndarray) -> float:
    cols = [np.array([Fraction(int(x), int(sum(P[:, j]))) for x in P[:, j]]) for j in range(P.shape[1])]
    gap = 0.0
    for i in range(len(cols)):
        for j in range(i + 1, len(cols)):
            gap = max(gap, float(sum(abs(a - b) for a, b in zip(cols[i], cols[j]))))
    return gap


def invariant_measure(seq: SubstitutionSequence, tol: float = 1e-13, strict: bool = True) -> InvariantMeasure:
    """Level masses ``z^(ell)`` of the invariant probability measure.

    ``z^(0)`` is the limit direction of the cones ``S_1 ... S_n R_+^m``,
    normalized to total mass 1; deeper levels satisfy
    ``z^(ell) = S_{ell+1} z^(ell+1)``.  The depth grows until the normalized
    columns of ``S^[n]`` are ``tol``-close in l1.
    """
    depth = None
    gap = float("inf")
    for n in range(1, len(seq) + 1):
        gap = _column_gap(seq.prefix_product(n))
        if gap < tol:
            depth = n
            break
    if depth is None:
        if strict:
            raise ConvergenceError(f"cone diameter {gap:.3g} after {len(seq)} steps")
        depth = len(seq)
    # v_ell = S_{ell+1} ... S_depth 1, exactly
    v = [None] * (depth + 1)
    v[depth] = np.ones(seq.m, dtype=int).astype(object)
    for ell in range(depth - 1, -1, -1):
        v[ell] = seq.matrix(ell + 1) @ v[ell + 1]
    z = []
    for ell in range(depth + 1):
        h = seq.heights(ell) if ell else np.ones(seq.m, dtype=int).astype(object)
        mass = int(h @ v[ell])
        z.append(np.array([float(Fraction(int(x), mass)) for x in v[ell]]))
    return InvariantMeasure(z, gap, depth)


# --- paths ------------------------------------------------------------------

@dataclass(frozen=True)
class PathPrefix:
    top: int  # vertex b_n at level n
    edges: tuple[int, ...]  # e_1, ..., e_n

    @property
    def depth(self) -> int:
        return len(self.edges)

    @classmethod
    def minimal(cls, seq: SubstitutionSequence, b: int, n: int) -> "PathPrefix":
        return cls(b, (0,) * n)

    @classmethod
    def maximal(cls, seq: SubstitutionSequence, b: int, n: int) -> "PathPrefix":
        edges = [0] * n
        v = b
        for k in range(n, 0, -1):
            img = seq[k](v)
            edges[k - 1] = len(img) - 1
            v = img[-1]
        return cls(b, tuple(edges))

    def vertices(self, seq: SubstitutionSequence) -> list[int]:
        """``[b_0, b_1, ..., b_n]``."""
        out = [0] * (self.depth + 1)
        out[-1] = self.top
        for k in range(self.depth, 0, -1):
            img = seq[k](out[k])
            e = self.edges[k - 1]
            if not 0 <= e < len(img):
                raise ValueError(f"edge index {e} out of range at level {k}")
            out[k - 1] = img[e]
        return out

    def is_maximal(self, seq: SubstitutionSequence) -> bool:
        vs = self.vertices(seq)
        return all(self.edges[k - 1] == len(seq[k](vs[k])) - 1 for k in range(1, self.depth + 1))

    def successor(self, seq: SubstitutionSequence) -> "PathPrefix":
        """Vershik successor: bump the lowest non-maximal edge, reset below."""
        vs = self.vertices(seq)
        edges = list(self.edges)
        for k in range(1, self.depth + 1):
            if edges[k - 1] < len(seq[k](vs[k])) - 1:
                edges[k - 1] += 1
                for j in range(1, k):
                    edges[j - 1] = 0
                return PathPrefix(self.top, tuple(edges))
        raise MaximalPathError("successor of a maximal path")

    def position(self, seq: SubstitutionSequence) -> int:
        """Index of the marked letter inside ``zeta^[n](b_n)``."""
        vs = self.vertices(seq)
        pos = 0
        for k in range(1, self.depth + 1):
            prefix = seq[k](vs[k])[: self.edges[k - 1]]
            if prefix:
                h = seq.heights(k - 1) if k > 1 else np.ones(seq.m, dtype=int).astype(object)
                pos += int(sum(h[c - 1] for c in prefix))
        return pos

    def shift(self, ell: int) -> "PathPrefix":
        """The same path seen from level ``ell`` (drops ``e_1..e_ell``)."""
        return PathPrefix(self.top, self.edges[ell:])


def prefix_suffix(seq: SubstitutionSequence, p: PathPrefix) -> list[tuple[tuple, tuple]]:
    """``[(u_k, v_k)]`` with ``zeta_{k+1}(b_{k+1}) = u_k b_k v_k``, k = 0..n-1."""
    vs = p.vertices(seq)
    out = []
    for k in range(p.depth):
        img = seq[k + 1](vs[k + 1])
        e = p.edges[k]
        out.append((img[:e], img[e + 1 :]))
    return out


# --- words ------------------------------------------------------------------

def _image_table(z: Substitution) -> tuple[np.ndarray, np.ndarray]:
    lens = z.lengths()
    table = np.zeros((z.m + 1, int(lens.max())), dtype=np.int32)
    for b, w in enumerate(z.images, 1):
        table[b, : len(w)] = w
    return table, np.concatenate([[0], lens])


def expand(z: Substitution, word: np.ndarray) -> np.ndarray:
    """Vectorized ``z(word)`` for int arrays."""
    table, lens = _image_table(z)
    word = np.asarray(word, dtype=np.int32)
    L = lens[word]
    total = int(L.sum())
    if total > MAX_WORD_LENGTH:
        raise MaterializationError(f"word of length {total} exceeds {MAX_WORD_LENGTH}")
    mask = np.arange(table.shape[1])[None, :] < L[:, None]
    return table[word][mask]


def level_word(seq: SubstitutionSequence, word, n1: int, n2: int) -> np.ndarray:
    """``zeta_{n1} o ... o zeta_{n2} (word)`` as an int array."""
    w = np.asarray(word, dtype=np.int32)
    for k in range(n2, n1 - 1, -1):
        w = expand(seq[k], w)
    return w


def horizontal_word(seq: SubstitutionSequence, b: int, n: int, window: int | None = None) -> np.ndarray:
    """``zeta^[n](b)``; refuses beyond :data:`MAX_WORD_LENGTH` letters.

    With ``window`` only the first ``window`` letters are built.
    """
    if window is not None:
        return forward_word(seq, PathPrefix.minimal(seq, b, n), max_letters=window)
    h = int(seq.heights(n)[b - 1]) if n else 1
    if h > MAX_WORD_LENGTH:
        raise MaterializationError(f"zeta^[{n}]({b}) has {h} letters")
    return level_word(seq, [b], 1, n)


def anchored_word(seq: SubstitutionSequence, p: PathPrefix) -> tuple[np.ndarray, np.ndarray]:
    """Split ``zeta^[n](b_n)`` at the marked letter: ``(left, right)``.

    ``left = zeta^[n-1](u_{n-1}) ... zeta^[1](u_1) u_0`` and
    ``right = b_0 v_0 zeta^[1](v_1) ... zeta^[n-1](v_{n-1})``.
    """
    ps = prefix_suffix(seq, p)
    b0 = p.vertices(seq)[0]
    left = [level_word(seq, u, 1, k) for k, (u, _) in enumerate(ps)]
    right = [level_word(seq, v, 1, k) for k, (_, v) in enumerate(ps)]
    left_w = np.concatenate(left[::-1]) if left else np.zeros(0, dtype=np.int32)
    right_w = np.concatenate([np.array([b0], dtype=np.int32)] + right)
    return left_w.astype(np.int32), right_w.astype(np.int32)


def forward_word(seq: SubstitutionSequence, p: PathPrefix, max_letters: int | None = None) -> np.ndarray:
    """Letters from the marked one to the end of ``zeta^[n](b_n)``."""
    ps = prefix_suffix(seq, p)
    b0 = p.vertices(seq)[0]
    parts = [np.array([b0], dtype=np.int32)]
    count = 1
    for k, (_, v) in enumerate(ps):
        for c in v:
            if max_letters is not None and count >= max_letters:
                break
            piece = level_word(seq, [c], 1, k)
            parts.append(piece)
            count += len(piece)
    w = np.concatenate(parts)
    return w if max_letters is None else w[:max_letters]


# --- suspension -------------------------------------------------------------

@dataclass
class Itinerary:
    letters: np.ndarray
    starts: np.ndarray
    durations: np.ndarray

    def __len__(self):
        return len(self.letters)

    def to_csv(self) -> str:
        rows = ["index,letter,start_time,duration"]
        for i, (a, t, d) in enumerate(zip(self.letters, self.starts, self.durations)):
            rows.append(f"{i},{int(a)},{float(t)!r},{float(d)!r}")
        return "\n".join(rows) + "\n"


def suspension_itinerary(seq: SubstitutionSequence, p: PathPrefix, s: Sequence[float], T: float) -> Itinerary:
    """Tiles met by the flow from ``(p, 0)`` until time ``T``."""
    s = np.asarray(s, dtype=float)
    ps = prefix_suffix(seq, p)
    b0 = p.vertices(seq)[0]
    parts = [np.array([b0], dtype=np.int32)]
    total = s[b0 - 1]
    done = total >= T
    for k, (_, v) in enumerate(ps):
        if done:
            break
        roof = level_roof(seq, s, k)
        for c in v:
            if total >= T:
                done = True
                break
            if total + roof[c - 1] < T:
                # the whole block is needed; materialize it
                parts.append(level_word(seq, [c], 1, k))
                total += roof[c - 1]
            else:
                parts.append(_partial_block(seq, s, c, k, T - total))
                total = T
                done = True
                break
    w = np.concatenate(parts)
    dur = s[w - 1]
    starts = np.concatenate([[0.0], np.cumsum(dur)[:-1]])
    keep = starts < T
    if starts[keep][-1] + dur[keep][-1] < T * (1 - 1e-15):
        raise ItineraryTooShort(f"path of depth {p.depth} covers only {starts[-1] + dur[-1]:.6g} < {T}")
    return Itinerary(w[keep], starts[keep], dur[keep])


def _partial_block(seq, s, c, k, need) -> np.ndarray:
    """Shortest prefix of ``zeta^[k](c)`` whose tiles reach length ``need``."""
    if k == 0:
        return np.array([c], dtype=np.int32)
    roof = level_roof(seq, s, k - 1)
    out = []
    acc = 0.0
    for d in seq[k](c):
        if acc + roof[d - 1] < need:
            out.append(level_word(seq, [d], 1, k - 1))
            acc += roof[d - 1]
        else:
            out.append(_partial_block(seq, s, d, k - 1, need - acc))
            break
    return np.concatenate(out)


# --- telescoping ------------------------------------------------------------

def telescope(seq: SubstitutionSequence, boundaries: Sequence[int]) -> SubstitutionSequence:
    """Group steps ``[b_j, b_{j+1})`` (1-based, ``b_0 = 1``, last = len + 1)."""
    bs = list(boundaries)
    if bs[0] != 1 or bs[-1] != len(seq) + 1 or any(x >= y for x, y in zip(bs, bs[1:])):
        raise ValueError("boundaries must increase from 1 to len(seq) + 1")
    return SubstitutionSequence([seq.composed(a, b - 1) for a, b in zip(bs, bs[1:])])


def telescope_canonical(
    seq: SubstitutionSequence, q: Substitution, boundaries: Sequence[int], q_steps: int
) -> SubstitutionSequence:
    """Regroup into blocks ``q o xi_j o q``.

    Each group must start and end with ``q_steps`` steps composing to ``q``;
    what lies between composes to ``xi_j`` (identity when empty).
    """
    bs = list(boundaries)
    steps, xis = [], []
    for a, b in zip(bs, bs[1:]):
        if b - a < 2 * q_steps:
            raise CanonicalFormError(f"group [{a}, {b}) too short for q.q")
        head = seq.composed(a, a + q_steps - 1)
        tail = seq.composed(b - q_steps, b - 1)
        if head != q or tail != q:
            raise CanonicalFormError(f"group [{a}, {b}) does not start and end with q")
        xi = seq.composed(a + q_steps, b - q_steps - 1) if b - a > 2 * q_steps else Substitution.identity(seq.m)
        xis.append(xi)
        steps.append(compose_all([q, xi, q]))
    if bs[0] != 1 or bs[-1] != len(seq) + 1:
        raise ValueError("boundaries must cover the sequence")
    return SubstitutionSequence(steps, CanonicalMarker(q, tuple(xis)))


def canonical_sequence(q: Substitution, xis: Sequence[Substitution]) -> SubstitutionSequence:
    """Build ``zeta_n = q o xi_n o q`` directly."""
    return SubstitutionSequence([compose_all([q, x, q]) for x in xis], CanonicalMarker(q, tuple(xis)))


def vershik_orbit(seq: SubstitutionSequence, p: PathPrefix, count: int) -> Iterator[PathPrefix]:
    yield p
    for _ in range(count - 1):
        p = p.successor(seq)
        yield p
