"""Substitutions on the alphabet {1, ..., m}.

Words are tuples of positive ints.  A substitution is stored as the tuple of
its images; ``zeta.images[b - 1]`` is the image of the letter ``b``.

Notation used throughout the package:

* ``subst_matrix(zeta)[a - 1, b - 1]`` counts the letter ``a`` in ``zeta(b)``,
  so the matrix of ``compose(outer, inner)`` is ``S_outer @ S_inner``.
* ``population_vector(v, m)`` is the letter-count vector of a word.
* ``tiling_length(v, s) = <population_vector(v), s>`` is the length of the
  tiles of ``v`` when letter ``a`` has length ``s[a - 1]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

Word = tuple[int, ...]

# hard ceiling on the length of any materialized word
MAX_WORD_LENGTH = 10_000_000


class MaterializationError(RuntimeError):
    """A word would exceed :data:`MAX_WORD_LENGTH` letters."""


def _check_word(word: Sequence[int], m: int) -> Word:
    w = tuple(int(c) for c in word)
    if not w:
        raise ValueError("empty image")
    for c in w:
        if not 1 <= c <= m:
            raise ValueError(f"letter {c} outside 1..{m}")
    return w


@dataclass(frozen=True)
class Substitution:
    """A substitution on ``m`` letters, given by its images."""

    images: tuple[Word, ...]

    def __post_init__(self):
        m = len(self.images)
        if m < 1:
            raise ValueError("need at least one letter")
        object.__setattr__(self, "images", tuple(_check_word(w, m) for w in self.images))

    @classmethod
    def from_images(cls, images: Iterable[Iterable[int] | str]) -> "Substitution":
        """Build from images given as int sequences or digit strings."""
        out = []
        for w in images:
            if isinstance(w, str):
                w = [int(t) for t in w.split(",")] if "," in w else [int(t) for t in w]
            out.append(tuple(w))
        return cls(tuple(out))

    @classmethod
    def identity(cls, m: int) -> "Substitution":
        return cls(tuple((b,) for b in range(1, m + 1)))

    @property
    def m(self) -> int:
        return len(self.images)

    def __call__(self, word: Sequence[int] | int) -> Word:
        if isinstance(word, (int, np.integer)):
            return self.images[int(word) - 1]
        return apply(self, word)

    def lengths(self) -> np.ndarray:
        return np.array([len(w) for w in self.images], dtype=np.int64)

    def __str__(self):
        return "{" + ", ".join(f"{b}->{_fmt(w, self.m)}" for b, w in enumerate(self.images, 1)) + "}"

    # JSON form: {"m": 2, "images": ["12", "1"]}
    def to_json(self) -> dict:
        return {"m": self.m, "images": [_fmt(w, self.m) for w in self.images]}

    @classmethod
    def from_json(cls, obj: dict | str) -> "Substitution":
        if isinstance(obj, str):
            obj = json.loads(obj)
        m = int(obj["m"])
        images = obj["images"]
        if len(images) != m:
            raise ValueError(f"expected {m} images, got {len(images)}")
        if m > 9:
            images = [[int(t) for t in w.split(",")] if isinstance(w, str) else w for w in images]
        return cls.from_images(images)


def _fmt(w: Word, m: int) -> str:
    if m <= 9:
        return "".join(str(c) for c in w)
    return ",".join(str(c) for c in w)


def apply(zeta: Substitution, word: Sequence[int]) -> Word:
    """Image of a word under ``zeta``."""
    total = sum(len(zeta.images[c - 1]) for c in word)
    if total > MAX_WORD_LENGTH:
        raise MaterializationError(f"word of length {total} exceeds {MAX_WORD_LENGTH}")
    out: list[int] = []
    for c in word:
        out.extend(zeta.images[c - 1])
    return tuple(out)


def compose(outer: Substitution, inner: Substitution) -> Substitution:
    """``compose(outer, inner)(b) == outer(inner(b))``."""
    if outer.m != inner.m:
        raise ValueError("alphabet sizes differ")
    return Substitution(tuple(apply(outer, w) for w in inner.images))


def compose_all(subs: Sequence[Substitution], m: int | None = None) -> Substitution:
    """``subs[0] o subs[1] o ... o subs[-1]``; identity for an empty list."""
    if not subs:
        if m is None:
            raise ValueError("alphabet size needed for an empty composition")
        return Substitution.identity(m)
    out = subs[-1]
    for z in reversed(subs[:-1]):
        out = compose(z, out)
    return out


def subst_matrix(zeta: Substitution) -> np.ndarray:
    """Integer matrix with ``S[a-1, b-1]`` = number of ``a`` in ``zeta(b)``."""
    m = zeta.m
    S = np.zeros((m, m), dtype=np.int64)
    for b, w in enumerate(zeta.images):
        S[:, b] = np.bincount(np.asarray(w) - 1, minlength=m)
    return S


def population_vector(word: Sequence[int], m: int) -> np.ndarray:
    if len(word) == 0:
        return np.zeros(m, dtype=np.int64)
    return np.bincount(np.asarray(word, dtype=np.int64) - 1, minlength=m)


def tiling_length(word: Sequence[int], s: Sequence) -> float | Fraction:
    """``<population_vector(word), s>``; exact when ``s`` holds Fractions or ints."""
    pop = population_vector(word, len(s))
    return sum((int(c) * x for c, x in zip(pop, s)), start=0 * s[0])


# --- good return words ------------------------------------------------------

def _enc(word: Sequence[int]) -> str:
    # letters as code points, so that substring search is str.__contains__
    return "".join(map(chr, word))


def good_return_words(zeta: Substitution, max_len: int | None = None) -> frozenset[Word]:
    """Words ``v`` with ``|v| <= max_len`` such that ``v c`` is a factor of every
    image ``zeta(b)``, where ``c`` is the first letter of ``v``.

    ``max_len`` defaults to the longest image length.
    """
    if max_len is None:
        max_len = int(zeta.lengths().max())
    images = sorted(zeta.images, key=len)
    encoded = [_enc(w) for w in images]
    shortest = encoded[0]
    n = len(shortest)
    found: set[str] = set()
    for i in range(n):
        c = shortest[i]
        hi = min(n, i + max_len + 1)
        j = shortest.find(c, i + 1, hi)
        while j != -1:
            cand = shortest[i : j + 1]
            if cand[:-1] not in found and all(cand in e for e in encoded[1:]):
                found.add(cand[:-1])
            j = shortest.find(c, j + 1, hi)
    return frozenset(tuple(map(ord, v)) for v in found)


def bareiss_rank(rows: Sequence[Sequence[int]]) -> int:
    """Exact rank of an integer matrix by fraction-free elimination."""
    M = [list(map(int, r)) for r in rows]
    if not M:
        return 0
    nr, nc = len(M), len(M[0])
    rank, prev = 0, 1
    for col in range(nc):
        piv = next((r for r in range(rank, nr) if M[r][col] != 0), None)
        if piv is None:
            continue
        M[rank], M[piv] = M[piv], M[rank]
        for r in range(rank + 1, nr):
            for k in range(col + 1, nc):
                M[r][k] = (M[r][k] * M[rank][col] - M[rank][k] * M[r][col]) // prev
            M[r][col] = 0
        prev = M[rank][col]
        rank += 1
        if rank == nr:
            break
    return rank


def integer_det(M: Sequence[Sequence[int]]) -> int:
    """Exact determinant of a square integer matrix (Bareiss)."""
    A = [list(map(int, r)) for r in M]
    n = len(A)
    sign, prev = 1, 1
    for k in range(n - 1):
        if A[k][k] == 0:
            piv = next((r for r in range(k + 1, n) if A[r][k] != 0), None)
            if piv is None:
                return 0
            A[k], A[piv] = A[piv], A[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                A[i][j] = (A[i][j] * A[k][k] - A[i][k] * A[k][j]) // prev
        prev = A[k][k]
    return sign * A[n - 1][n - 1] if n else 1


def select_return_basis(zeta: Substitution, max_len: int | None = None) -> tuple[Word, ...] | None:
    """Pick ``m`` good return words with linearly independent population vectors.

    Candidates are scanned in shortlex order and kept whenever they raise the
    rank, which yields the shortlex-least basis.  Returns ``None`` when the
    good return words of length ``<= max_len`` span less than the full space.
    """
    m = zeta.m
    words = sorted(good_return_words(zeta, max_len), key=lambda w: (len(w), w))
    basis: list[Word] = []
    vecs: list[list[int]] = []
    for w in words:
        v = population_vector(w, m).tolist()
        if bareiss_rank(vecs + [v]) > len(vecs):
            basis.append(w)
            vecs.append(v)
            if len(basis) == m:
                return tuple(basis)
    return None


# --- constants --------------------------------------------------------------

def col(A: np.ndarray) -> float:
    """``max_{i,j,k} A[i,j] / A[k,j]`` for a matrix with positive entries."""
    A = np.asarray(A, dtype=float)
    if np.any(A <= 0):
        raise ValueError("col() needs a strictly positive matrix")
    return float(np.max(A.max(axis=0) / A.min(axis=0)))


def c1_constant(Q: np.ndarray) -> tuple[float, float]:
    """Return ``(col(Q^t), c1)`` with ``c1 = 1 / (2 m max(Q) col(Q^t))``."""
    Q = np.asarray(Q)
    m = Q.shape[0]
    colQt = col(Q.T)
    return colQt, 1.0 / (2 * m * float(Q.max()) * colQt)
