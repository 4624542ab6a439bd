"""Interval exchange transformations and Rauzy-Veech induction.

Conventions
-----------
Intervals carry fixed labels ``1..m``.  A labelled permutation is a pair
``(top, bottom)`` of label orders: ``top`` is the order of the subintervals
before the exchange, ``bottom`` the order of their images.  The reduced
one-line form ``pi`` has ``pi[i] = position in bottom of top[i]`` (1-based),
so ``(4, 3, 2, 1)`` reverses four intervals.

One induction step compares the last top interval with the last bottom
interval.  The longer one is the *winner* and the shorter the *loser*:

* kind ``"a"``: the top interval wins; the loser moves, in the bottom order,
  to just after the winner.
* kind ``"b"``: the bottom interval wins; the loser moves, in the top order,
  to just after the winner.

The winner's length drops by the loser's length and lengths are rescaled to
sum 1.  The step matrix is ``I + E[winner, loser]``; it satisfies
``lambda_old ~ A @ lambda_new``.  The renormalization cocycle uses the
transposes, ``cocycle_matrix = A.T``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

from .substitution import Substitution, Word, compose_all, select_return_basis, subst_matrix

TIE_RTOL = 1e-14


class DegenerateTieError(ArithmeticError):
    """Last top and last bottom intervals have (numerically) equal length."""

    def __init__(self, step_index: int, path: "RauzyPath | None" = None):
        super().__init__(f"tie at induction step {step_index}")
        self.step_index = step_index
        self.path = path


class FloorStraddleError(ArithmeticError):
    """A tower floor is not contained in a single subinterval."""


# --- permutations -----------------------------------------------------------

@dataclass(frozen=True)
class LabelledPermutation:
    top: tuple[int, ...]
    bottom: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.top) != list(range(1, len(self.top) + 1)) or sorted(self.bottom) != sorted(self.top):
            raise ValueError("top and bottom must both be orderings of 1..m")

    @classmethod
    def from_one_line(cls, pi: Sequence[int]) -> "LabelledPermutation":
        pi = tuple(int(x) for x in pi)
        m = len(pi)
        if sorted(pi) != list(range(1, m + 1)):
            raise ValueError(f"{pi} is not a permutation of 1..{m}")
        bottom = [0] * m
        for i, p in enumerate(pi, 1):
            bottom[p - 1] = i
        return cls(tuple(range(1, m + 1)), tuple(bottom))

    @property
    def m(self) -> int:
        return len(self.top)

    def one_line(self) -> tuple[int, ...]:
        pos = {lab: k for k, lab in enumerate(self.bottom, 1)}
        return tuple(pos[lab] for lab in self.top)

    def is_irreducible(self) -> bool:
        return is_irreducible(self.one_line())

    def step(self, kind: str) -> tuple["LabelledPermutation", int, int]:
        """Combinatorial part of an induction step: ``(new, winner, loser)``."""
        top, bottom = list(self.top), list(self.bottom)
        if kind == "a":
            winner, loser = top[-1], bottom.pop()
            bottom.insert(bottom.index(winner) + 1, loser)
        elif kind == "b":
            winner, loser = bottom[-1], top.pop()
            top.insert(top.index(winner) + 1, loser)
        else:
            raise ValueError(f"unknown step kind {kind!r}")
        return LabelledPermutation(tuple(top), tuple(bottom)), winner, loser


def is_irreducible(pi: Sequence[int]) -> bool:
    m = len(pi)
    return all(set(pi[:k]) != set(range(1, k + 1)) for k in range(1, m))


def reduce_perm(p: LabelledPermutation) -> tuple[int, ...]:
    return p.one_line()


# --- IETs -------------------------------------------------------------------

@dataclass(frozen=True)
class IET:
    """Lengths indexed by label (``lengths[k - 1]`` is the length of label k)."""

    perm: LabelledPermutation
    lengths: tuple

    def __post_init__(self):
        if len(self.lengths) != self.perm.m:
            raise ValueError("length vector does not match permutation size")
        if any(x <= 0 for x in self.lengths):
            raise ValueError("lengths must be positive")
        if not self.perm.is_irreducible():
            raise ValueError(f"permutation {self.pi} is reducible")

    @classmethod
    def from_one_line(cls, pi: Sequence[int], lengths: Sequence, exact: bool = False) -> "IET":
        """``lengths`` listed in top order, normalized to sum 1."""
        if exact:
            lam = [Fraction(x) for x in lengths]
        else:
            lam = [float(x) for x in lengths]
        total = sum(lam)
        return cls(LabelledPermutation.from_one_line(pi), tuple(x / total for x in lam))

    @property
    def m(self) -> int:
        return self.perm.m

    @property
    def pi(self) -> tuple[int, ...]:
        return self.perm.one_line()

    @property
    def exact(self) -> bool:
        return isinstance(self.lengths[0], Fraction)

    def length(self, label: int):
        return self.lengths[label - 1]

    def top_lengths(self) -> tuple:
        return tuple(self.length(k) for k in self.perm.top)

    def total(self):
        return sum(self.lengths)

    def starts(self) -> tuple[dict, dict]:
        """Left endpoints of each label in the domain and in the image."""
        dom, img = {}, {}
        x = 0 * self.lengths[0]
        for lab in self.perm.top:
            dom[lab] = x
            x += self.length(lab)
        x = 0 * self.lengths[0]
        for lab in self.perm.bottom:
            img[lab] = x
            x += self.length(lab)
        return dom, img

    def __call__(self, x):
        dom, img = self.starts()
        lab = self.locate(x, dom)
        return x - dom[lab] + img[lab]

    def locate(self, x, dom=None) -> int:
        if dom is None:
            dom = self.starts()[0]
        for lab in reversed(self.perm.top):
            if x >= dom[lab]:
                return lab
        raise ValueError(f"{x} outside the domain")

    def to_json(self) -> dict:
        lam = self.top_lengths()
        out = {"pi": list(self.pi), "lambda": [str(x) if self.exact else float(x) for x in lam]}
        out["top"] = list(self.perm.top)
        out["bottom"] = list(self.perm.bottom)
        return out

    @classmethod
    def from_json(cls, obj: dict, exact: bool = False) -> "IET":
        lam = obj["lambda"]
        if "top" in obj:
            perm = LabelledPermutation(tuple(obj["top"]), tuple(obj["bottom"]))
            conv = Fraction if exact else float
            by_label = [None] * perm.m
            for lab, x in zip(perm.top, lam):
                by_label[lab - 1] = conv(x)
            total = sum(by_label)
            return cls(perm, tuple(x / total for x in by_label))
        return cls.from_one_line(obj["pi"], lam, exact=exact)


@dataclass(frozen=True)
class RauzyStep:
    kind: str
    winner: int
    loser: int
    m: int
    log_scale: float  # increment of log |Lambda|

    @property
    def matrix(self) -> np.ndarray:
        A = np.eye(self.m, dtype=np.int64)
        A[self.winner - 1, self.loser - 1] = 1
        return A

    @property
    def cocycle_matrix(self) -> np.ndarray:
        return self.matrix.T

    def substitution(self) -> Substitution:
        """One-step block substitution; only the loser's image has length 2."""
        images = [(b,) for b in range(1, self.m + 1)]
        if self.kind == "a":
            images[self.loser - 1] = (self.loser, self.winner)
        else:
            images[self.loser - 1] = (self.winner, self.loser)
        return Substitution(tuple(images))


def rauzy_step(T: IET, step_index: int = 0) -> tuple[IET, RauzyStep]:
    perm = T.perm
    t_last, b_last = perm.top[-1], perm.bottom[-1]
    lt, lb = T.length(t_last), T.length(b_last)
    if T.exact:
        tie = lt == lb
    else:
        tie = abs(lt - lb) < TIE_RTOL * max(T.lengths)
    if tie:
        raise DegenerateTieError(step_index)
    kind = "a" if lt > lb else "b"
    new_perm, winner, loser = perm.step(kind)
    lam = list(T.lengths)
    lam[winner - 1] -= lam[loser - 1]
    total = sum(lam)
    lam = tuple(x / total for x in lam)
    scale = -math.log(float(total)) if not T.exact else -math.log(total.numerator / total.denominator)
    return IET(new_perm, lam), RauzyStep(kind, winner, loser, T.m, scale)


@dataclass
class RauzyPath:
    start: IET
    steps: list[RauzyStep] = field(default_factory=list)
    iets: list[IET] = field(default_factory=list)  # iets[k] is the IET after k steps
    log_lambda: list[float] = field(default_factory=list)  # log |Lambda| after k steps

    def __len__(self):
        return len(self.steps)

    @property
    def end(self) -> IET:
        return self.iets[-1]

    @property
    def kinds(self) -> str:
        return "".join(st.kind for st in self.steps)

    def length_product(self) -> np.ndarray:
        """``A_1 A_2 ... A_n``; maps final lengths to (unnormalized) initial ones."""
        P = np.eye(self.start.m, dtype=object)
        for st in self.steps:
            P = P @ st.matrix.astype(object)
        return P

    def cocycle_product(self) -> np.ndarray:
        """``A_n^t ... A_1^t``, the renormalization cocycle along the path."""
        return self.length_product().T

    def substitution(self) -> Substitution:
        return compose_all([st.substitution() for st in self.steps], self.start.m)


def rauzy_path(T: IET, n: int) -> RauzyPath:
    """Run ``n`` induction steps.  On a tie the error carries the partial path."""
    path = RauzyPath(T, [], [T], [0.0])
    cur, L = T, 0.0
    for k in range(n):
        try:
            cur, st = rauzy_step(cur, k)
        except DegenerateTieError as err:
            err.path = path
            raise
        L += st.log_scale
        path.steps.append(st)
        path.iets.append(cur)
        path.log_lambda.append(L)
    return path


def rauzy_kinds(T: IET, n: int) -> Iterator[tuple[str, int, int]]:
    """Fast float-mode stream of ``(kind, winner, loser)`` for ``n`` steps."""
    top, bottom = list(T.perm.top), list(T.perm.bottom)
    lam = [0.0] + [float(x) for x in T.lengths]
    for k in range(n):
        t, b = top[-1], bottom[-1]
        lt, lb = lam[t], lam[b]
        if abs(lt - lb) < TIE_RTOL * max(lam):
            raise DegenerateTieError(k)
        if lt > lb:
            bottom.pop()
            bottom.insert(bottom.index(t) + 1, b)
            lam[t] = lt - lb
            yield "a", t, b
        else:
            top.pop()
            top.insert(top.index(b) + 1, t)
            lam[b] = lb - lt
            yield "b", b, t
        total = sum(lam)
        lam = [x / total for x in lam]


# --- block substitutions from towers ---------------------------------------

def block_substitution(T: IET, path: RauzyPath) -> Substitution:
    """Substitution read off the Rokhlin towers of the induced map.

    ``zeta(i)`` lists, floor by floor, the labels of the subintervals of ``T``
    visited by the subinterval ``i`` of the induced interval before it
    returns.  This simulates orbits and does not use the step matrices.
    """
    end = path.end
    J = induced_length(path)
    tol = 0 if T.exact else 1e-10
    dom, img = T.starts()
    top_order = T.perm.top
    ends = {lab: dom[lab] + T.length(lab) for lab in top_order}
    edom, _ = end.starts()
    images: list[Word] = [()] * T.m
    for lab in end.perm.top:
        x = edom[lab] * J
        L = end.length(lab) * J
        floors: list[int] = []
        while True:
            mid = x + L / 2
            cur = T.locate(mid, dom)
            if x < dom[cur] - tol or x + L > ends[cur] + tol:
                raise FloorStraddleError(f"floor [{x}, {x + L}) crosses a discontinuity")
            floors.append(cur)
            x = x - dom[cur] + img[cur]
            if x + L / 2 < J:
                if x + L > J + tol:
                    raise FloorStraddleError("tower floor straddles the induced interval")
                break
            if len(floors) > 10_000_000:
                raise FloorStraddleError("return time exceeds materialization ceiling")
        images[lab - 1] = tuple(floors)
    return Substitution(tuple(images))


def _exact_induced_length(path: RauzyPath) -> Fraction:
    J = Fraction(1)
    for k, st in enumerate(path.steps):
        prev = path.iets[k]
        J *= 1 - prev.length(st.loser)
    return J


def induced_length(path: RauzyPath):
    """Length of the induced interval in units of the starting interval."""
    if path.start.exact:
        return _exact_induced_length(path)
    J = 1.0
    for k, st in enumerate(path.steps):
        J *= 1.0 - path.iets[k].length(st.loser)
    return J


# --- Rauzy classes ----------------------------------------------------------

@dataclass
class RauzyClass:
    vertices: list  # one-line tuples, or LabelledPermutation when labelled
    edges: dict  # (vertex, kind) -> vertex
    labelled: bool
    start: object

    def __len__(self):
        return len(self.vertices)

    def successor(self, v, kind):
        return self.edges[(v, kind)]

    def is_strongly_connected(self) -> bool:
        rev: dict = {v: [] for v in self.vertices}
        for (v, _), w in self.edges.items():
            rev[w].append(v)
        for graph in (None, rev):
            seen = {self.start}
            queue = deque([self.start])
            while queue:
                v = queue.popleft()
                nxt = [self.edges[(v, k)] for k in "ab"] if graph is None else graph[v]
                for w in nxt:
                    if w not in seen:
                        seen.add(w)
                        queue.append(w)
            if len(seen) != len(self.vertices):
                return False
        return True

    def pure_cycle(self, v, kind) -> int | None:
        """Length of the ``kind``-only cycle through ``v``, or None."""
        w = v
        for k in range(1, len(self.vertices) + 1):
            w = self.edges[(w, kind)]
            if w == v:
                return k
        return None

    def walk(self, v, word: str):
        for k in word:
            v = self.edges[(v, k)]
        return v


def rauzy_class(pi: Sequence[int], labelled: bool = False) -> RauzyClass:
    """Closure of ``pi`` under the two induction operations (BFS)."""
    pi = tuple(pi)
    if not is_irreducible(pi):
        raise ValueError(f"{pi} is reducible")
    start_l = LabelledPermutation.from_one_line(pi)
    start = start_l if labelled else pi
    edges = {}
    order = [start]
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        p = v if labelled else LabelledPermutation.from_one_line(v)
        for kind in "ab":
            q = p.step(kind)[0]
            w = q if labelled else q.one_line()
            edges[(v, kind)] = w
            if w not in seen:
                seen.add(w)
                order.append(w)
                queue.append(w)
    return RauzyClass(order, edges, labelled, start)


def path_substitution(p: LabelledPermutation, word: str) -> tuple[Substitution, np.ndarray, LabelledPermutation]:
    """Substitution and length product of an admissible word from ``p``."""
    subs = []
    m = p.m
    P = np.eye(m, dtype=np.int64)
    for kind in word:
        p, w, l = p.step(kind)
        st = RauzyStep(kind, w, l, m, 0.0)
        subs.append(st.substitution())
        P = P @ st.matrix
    return compose_all(subs, m), P, p


def is_simple(word: str) -> bool:
    """No proper suffix equals the prefix of the same length."""
    k = len(word)
    return all(word[i:] != word[: k - i] for i in range(1, k))


@dataclass
class CanonicalLoop:
    word: str
    vertex: LabelledPermutation
    substitution: Substitution
    matrix: np.ndarray  # length product, strictly positive
    basis: tuple  # good return words with independent population vectors


def find_positive_simple_loop(pi: "Sequence[int] | RauzyClass", max_length: int = 18) -> CanonicalLoop:
    """Shortest loop at ``pi`` in the labelled Rauzy class usable as a marker.

    The loop word must be simple, its length product strictly positive, all
    images of its substitution must start with the same letter, and its good
    return words must span the whole space.  Words of equal length are tried
    in lexicographic order (``a`` before ``b``).  ``pi`` may also be a
    :class:`RauzyClass`, searched from its base vertex.
    """
    if isinstance(pi, RauzyClass):
        start = pi.start
        pi = start.one_line() if pi.labelled else start
    C = rauzy_class(pi, labelled=True)
    v0 = C.start
    frontier = [("", v0)]
    for _ in range(max_length):
        frontier = [(w + k, C.edges[(v, k)]) for w, v in frontier for k in "ab"]
        for w, v in frontier:
            if v != v0:
                continue
            z, P, _ = path_substitution(v0, w)
            if not (P > 0).all() or not is_simple(w):
                continue
            if len({im[0] for im in z.images}) != 1:
                continue
            basis = select_return_basis(z)
            if basis is not None:
                return CanonicalLoop(w, v0, z, P, basis)
    raise ValueError(f"no admissible loop of length <= {max_length}")


def sample_iet(pi: Sequence[int], seed: int) -> IET:
    """IET with lengths drawn uniformly from the open simplex."""
    from .rng import STREAM_IET, make_rng

    pi = tuple(pi)
    if not is_irreducible(pi):
        raise ValueError(f"{pi} is reducible")
    lam = make_rng(seed, STREAM_IET).dirichlet(np.ones(len(pi)))
    return IET.from_one_line(pi, lam / lam.sum())
