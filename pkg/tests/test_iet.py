import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rauzy_spectra.iet import (
    IET, DegenerateTieError, LabelledPermutation, RauzyStep, block_substitution, find_positive_simple_loop,
    induced_length, is_irreducible, is_simple, path_substitution, rauzy_class, rauzy_kinds, rauzy_path,
    rauzy_step, sample_iet,
)
from rauzy_spectra.substitution import integer_det, subst_matrix

PI4 = (4, 3, 2, 1)


def random_iet(seed, pi=PI4):
    return sample_iet(pi, seed)


# --- permutations and classes -----------------------------------------------

def test_irreducibility():
    assert is_irreducible((2, 1)) and is_irreducible(PI4)
    assert not is_irreducible((1, 2)) and not is_irreducible((2, 1, 3))
    with pytest.raises(ValueError):
        rauzy_class((1, 2, 3))
    with pytest.raises(ValueError):
        sample_iet((2, 1, 3), 0)


def _bfs_oracle(pi):
    """Closure computed on one-line forms by rewriting the bottom row directly."""
    def step(p, kind):
        m = len(p)
        inv = {v: i for i, v in enumerate(p, 1)}  # position in top of the label at bottom position v
        top = list(range(1, m + 1))
        bottom = [inv[k] for k in range(1, m + 1)]
        if kind == "a":
            w, l = top[-1], bottom.pop()
            bottom.insert(bottom.index(w) + 1, l)
        else:
            w, l = bottom[-1], top.pop()
            top.insert(top.index(w) + 1, l)
        pos = {lab: k for k, lab in enumerate(bottom, 1)}
        return tuple(pos[lab] for lab in top)
    seen, todo = {pi}, [pi]
    while todo:
        p = todo.pop()
        for k in "ab":
            q = step(p, k)
            if q not in seen:
                seen.add(q)
                todo.append(q)
    return seen


def test_rauzy_class_sizes():
    C = rauzy_class(PI4)
    assert PI4 in C.vertices and len(C) == 7
    assert set(C.vertices) == _bfs_oracle(PI4)
    assert C.is_strongly_connected()
    assert len(rauzy_class(PI4, labelled=True)) == 7
    assert len(rauzy_class((3, 2, 1))) == 3


def test_two_interval_class_is_a_point():
    C = rauzy_class((2, 1))
    assert C.vertices == [(2, 1)]
    assert C.successor((2, 1), "a") == (2, 1) and C.successor((2, 1), "b") == (2, 1)


def test_every_vertex_has_pure_cycles():
    C = rauzy_class(PI4, labelled=True)
    for v in C.vertices:
        assert all((v, k) in C.edges for k in "ab")
        assert C.pure_cycle(v, "a") is not None and C.pure_cycle(v, "b") is not None


# --- single steps -----------------------------------------------------------

def test_two_interval_step():
    T = IET.from_one_line((2, 1), [0.7, 0.3])
    T2, step = rauzy_step(T)
    np.testing.assert_allclose(T2.top_lengths(), [4 / 7, 3 / 7], rtol=1e-15)
    assert T2.pi == (2, 1)
    Te = IET.from_one_line((2, 1), [Fraction(7, 10), Fraction(3, 10)], exact=True)
    assert rauzy_step(Te)[0].top_lengths() == (Fraction(4, 7), Fraction(3, 7))


def test_tie_raises():
    with pytest.raises(DegenerateTieError):
        rauzy_step(IET.from_one_line((2, 1), [0.5, 0.5]))
    with pytest.raises(DegenerateTieError):
        rauzy_step(IET.from_one_line(PI4, [Fraction(1), Fraction(2), Fraction(3), Fraction(1)], exact=True))


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_step_matrix_and_positivity(seed):
    T = random_iet(seed)
    for k in range(20):
        T2, step = rauzy_step(T, k)
        A = step.matrix
        assert abs(integer_det(A.tolist())) == 1
        off = A - np.eye(4, dtype=int)
        assert off.sum() == 1 and off.min() == 0 and np.trace(off) == 0
        assert all(x > 0 for x in T2.lengths) and abs(sum(T2.lengths) - 1) < 1e-14
        # lambda_old is proportional to A lambda_new
        v = A @ np.array(T2.lengths)
        np.testing.assert_allclose(v / v.sum(), T.lengths, rtol=1e-12)
        T = T2


# --- paths ------------------------------------------------------------------

def _euclid_steps(p, q):
    steps = 0
    while p != q:
        p, q = (p - q, q) if p > q else (p, q - p)
        steps += 1
    return steps


@pytest.mark.parametrize("p,q", [(3, 5), (1, 7), (13, 8), (21, 34), (5, 12)])
def test_rational_lengths_hit_tie_at_euclid_end(p, q):
    T = IET.from_one_line((2, 1), [Fraction(p), Fraction(q)], exact=True)
    with pytest.raises(DegenerateTieError) as err:
        rauzy_path(T, 100)
    assert err.value.step_index == _euclid_steps(p, q)
    assert len(err.value.path) == err.value.step_index


def test_golden_mean_has_period_two():
    phi = (1 + math.sqrt(5)) / 2
    path = rauzy_path(IET.from_one_line((2, 1), [phi, 1.0]), 30)
    k = path.kinds
    assert k == (k[:2] * 15) and k[0] != k[1]


@given(st.integers(0, 10_000), st.integers(1, 40))
@settings(max_examples=40, deadline=None)
def test_path_linkage_and_log_scale(seed, n):
    T = random_iet(seed)
    path = rauzy_path(T, n)
    P = path.length_product().astype(float)
    v = P @ np.array(path.end.lengths)
    np.testing.assert_allclose(v / v.sum(), T.lengths, rtol=1e-12)
    # accumulated log |Lambda| equals the log l1-norm of the product on the final lengths
    assert abs(path.log_lambda[-1] - math.log(v.sum())) <= 1e-9 * max(1.0, abs(path.log_lambda[-1]))
    np.testing.assert_array_equal(path.cocycle_product(), path.length_product().T)
    assert induced_length(path) == pytest.approx(1 / v.sum(), rel=1e-12)


def test_fast_kinds_match_full_path():
    T = random_iet(7)
    path = rauzy_path(T, 300)
    fast = list(rauzy_kinds(T, 300))
    assert "".join(k for k, _, _ in fast) == path.kinds
    assert [(w, l) for _, w, l in fast] == [(s.winner, s.loser) for s in path.steps]


def test_exact_mode_agrees_with_float():
    lam = [Fraction(x) for x in (31, 17, 23, 29)]
    Te = IET.from_one_line(PI4, lam, exact=True)
    Tf = IET.from_one_line(PI4, [float(x) for x in lam])
    pe, pf = rauzy_path(Te, 8), rauzy_path(Tf, 8)
    assert pe.kinds == pf.kinds
    np.testing.assert_allclose([float(x) for x in pe.end.lengths], pf.end.lengths, rtol=1e-12)


def test_json_roundtrip():
    T = random_iet(3)
    assert IET.from_json(T.to_json()).lengths == pytest.approx(T.lengths, rel=1e-15)
    js = {"pi": [4, 3, 2, 1], "lambda": ["1/10", "2/10", "3/10", "4/10"]}
    assert IET.from_json(js, exact=True).top_lengths() == tuple(Fraction(k, 10) for k in (1, 2, 3, 4))


# --- orbit consistency ------------------------------------------------------

def first_return(T, J, x):
    y = T(x)
    while y >= J:
        y = T(y)
    return y


@pytest.mark.parametrize("seed", range(5))
def test_induced_map_matches_first_return(seed):
    T = random_iet(seed)
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    path = rauzy_path(T, n)
    J = induced_length(path)
    for x in rng.uniform(0, J, 1000):
        assert abs(first_return(T, J, x) - J * path.end(x / J)) < 1e-10


# --- block substitutions ----------------------------------------------------

def test_golden_mean_block_substitution_is_fibonacci_like():
    phi = (1 + math.sqrt(5)) / 2
    T = IET.from_one_line((2, 1), [phi, 1.0])
    path = rauzy_path(T, 2)
    z = block_substitution(T, path)
    np.testing.assert_array_equal(z.lengths(), path.length_product().sum(axis=0))
    assert sorted(map(len, z.images)) == [2, 3]


@pytest.mark.parametrize("seed", range(100))
def test_tower_substitution_matches_step_product(seed):
    rng = np.random.default_rng(1000 + seed)
    T = random_iet(seed)
    path = rauzy_path(T, int(rng.integers(1, 25)))
    z = block_substitution(T, path)
    P = path.length_product()
    np.testing.assert_array_equal(subst_matrix(z), P)
    np.testing.assert_array_equal(subst_matrix(z).T, path.cocycle_product())
    np.testing.assert_array_equal(z.lengths(), P.sum(axis=0))
    assert z == path.substitution()


def test_block_heights_link_under_concatenation():
    T = random_iet(11)
    p1 = rauzy_path(T, 10)
    p2 = rauzy_path(p1.end, 7)
    full = rauzy_path(T, 17)
    h1 = block_substitution(T, p1).lengths()
    h12 = block_substitution(T, full).lengths()
    # h^(n+1) = (product of the next steps)^t h^(n)
    np.testing.assert_array_equal(h12, p2.length_product().T @ h1)


def test_path_substitution_concatenates():
    v0 = LabelledPermutation.from_one_line(PI4)
    z1, P1, v1 = path_substitution(v0, "aab")
    z2, P2, v2 = path_substitution(v1, "bab")
    z, P, v = path_substitution(v0, "aabbab")
    assert v == v2
    np.testing.assert_array_equal(P, P1 @ P2)
    from rauzy_spectra.substitution import compose
    assert z == compose(z1, z2)


def test_one_step_substitution_shape():
    st_a = RauzyStep("a", 2, 3, 4, 0.0).substitution()
    st_b = RauzyStep("b", 2, 3, 4, 0.0).substitution()
    assert st_a.images[2] == (3, 2) and st_b.images[2] == (2, 3)
    assert all(len(st_a.images[i]) == 1 for i in (0, 1, 3))


# --- canonical loop -------------------------------------------------------

def test_loop_search_golden():
    loop = find_positive_simple_loop(PI4)
    assert loop.word == "aababaababbbab"
    assert is_simple(loop.word)
    assert (loop.matrix >= 1).all()
    assert len({im[0] for im in loop.substitution.images}) == 1
    assert list(loop.substitution.lengths()) == [25, 40, 18, 14]
    C = rauzy_class(PI4, labelled=True)
    assert C.walk(C.start, loop.word) == C.start
    assert find_positive_simple_loop(C).word == loop.word


def test_loop_search_budget():
    with pytest.raises(ValueError):
        find_positive_simple_loop(PI4, max_length=6)


def test_is_simple():
    assert is_simple("aab") and not is_simple("aba") and not is_simple("abab")
    assert not is_simple("ab" * 3)


# --- sampling ---------------------------------------------------------------

def test_sample_iet_determinism_and_simplex():
    a, b = sample_iet(PI4, 42), sample_iet(PI4, 42)
    assert a == b and sample_iet(PI4, 43) != a
    assert min(a.lengths) > 0 and abs(sum(a.lengths) - 1) < 1e-15


def test_sample_iet_mean():
    n = 100_000
    X = np.array([sample_iet(PI4, s).lengths for s in range(n)])
    m = 4
    sigma = math.sqrt((m - 1) / (m * m * (m + 1))) / math.sqrt(n)  # Dirichlet(1,..,1) marginal sd
    assert np.all(np.abs(X.mean(axis=0) - 1 / m) < 3 * sigma)
