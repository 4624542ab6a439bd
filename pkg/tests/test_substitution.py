from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rauzy_spectra.substitution import (
    MaterializationError, Substitution, apply, bareiss_rank, c1_constant, col, compose, compose_all,
    good_return_words, integer_det, population_vector, select_return_basis, subst_matrix, tiling_length,
)


def subs_strategy(m_min=2, m_max=4, max_len=6):
    return st.integers(m_min, m_max).flatmap(
        lambda m: st.lists(st.lists(st.integers(1, m), min_size=1, max_size=max_len), min_size=m, max_size=m)
    ).map(Substitution.from_images)


# --- oracles ----------------------------------------------------------------

def is_factor(u, w):
    k = len(u)
    return any(tuple(w[i:i + k]) == tuple(u) for i in range(len(w) - k + 1))


def brute_good_return_words(zeta, max_len):
    """Every factor of every image, filtered by the definition."""
    cands = set()
    for w in zeta.images:
        for i in range(len(w)):
            for j in range(i + 1, min(len(w), i + max_len) + 1):
                cands.add(tuple(w[i:j]))
    return {v for v in cands
            if all(is_factor(v + (v[0],), img) for img in zeta.images)}


# --- compose / matrices -----------------------------------------------------

def test_compose_fibonacci_square():
    z = Substitution.from_images(["12", "1"])
    assert compose(z, z) == Substitution.from_images(["121", "12"])


def test_compose_identity():
    z = Substitution.from_images(["132", "21", "3"])
    assert compose(z, Substitution.identity(3)) == z
    assert compose(Substitution.identity(3), z) == z


def test_compose_arity_mismatch():
    with pytest.raises(ValueError):
        compose(Substitution.identity(2), Substitution.identity(3))


def test_subst_matrix_values():
    z = Substitution.from_images(["12", "1"])
    np.testing.assert_array_equal(subst_matrix(z), [[1, 1], [1, 0]])
    np.testing.assert_array_equal(subst_matrix(Substitution.identity(4)), np.eye(4, dtype=int))
    np.testing.assert_array_equal(subst_matrix(compose(z, z)), subst_matrix(z) @ subst_matrix(z))


@given(subs_strategy(), st.data())
@settings(max_examples=60, deadline=None)
def test_matrix_homomorphism(z1, data):
    z2 = data.draw(subs_strategy(z1.m, z1.m))
    np.testing.assert_array_equal(subst_matrix(compose(z1, z2)), subst_matrix(z1) @ subst_matrix(z2))


@given(subs_strategy())
@settings(max_examples=40, deadline=None)
def test_column_sums_are_lengths(z):
    S = subst_matrix(z)
    np.testing.assert_array_equal(S.sum(axis=0), z.lengths())
    for b in range(1, z.m + 1):
        np.testing.assert_array_equal(population_vector(z(b), z.m), S[:, b - 1])


def test_compose_all_order():
    a = Substitution.from_images(["12", "1"])
    b = Substitution.from_images(["2", "21"])
    assert compose_all([a, b]) == compose(a, b)
    assert compose_all([], 2) == Substitution.identity(2)


def test_invalid_images():
    with pytest.raises(ValueError):
        Substitution.from_images(["13", "1"])
    with pytest.raises(ValueError):
        Substitution(((1,), ()))


def test_materialization_guard():
    z = Substitution.from_images(["1" * 4000, "2"])
    with pytest.raises(MaterializationError):
        apply(z, (1,) * 3000)


# --- population vectors and tiling lengths ---------------------------------

def test_population_vector():
    np.testing.assert_array_equal(population_vector((1, 2, 1), 2), [2, 1])
    np.testing.assert_array_equal(population_vector((), 3), [0, 0, 0])


def test_tiling_length_examples():
    assert tiling_length((1, 2), [1, 1]) == 2
    assert tiling_length((1, 2, 1), [0.5, 0.25]) == 1.25
    assert tiling_length((1, 2, 1), [Fraction(1, 3), Fraction(1, 7)]) == Fraction(2, 3) + Fraction(1, 7)


@given(subs_strategy(), st.data())
@settings(max_examples=40, deadline=None)
def test_tiling_length_transfer(z, data):
    U = data.draw(st.lists(st.integers(1, z.m), min_size=0, max_size=12))
    s = [Fraction(data.draw(st.integers(1, 50)), 7) for _ in range(z.m)]
    St_s = subst_matrix(z).T.astype(object) @ np.array(s, dtype=object)
    lhs = tiling_length(apply(z, U), s) if U else 0
    rhs = tiling_length(U, list(St_s)) if U else 0
    assert lhs == rhs


@given(st.lists(st.integers(1, 3), max_size=10), st.lists(st.integers(1, 3), max_size=10))
def test_tiling_length_additive(u, v):
    s = [Fraction(1, 2), Fraction(1, 3), Fraction(5, 7)]
    assert tiling_length(tuple(u) + tuple(v), s) == tiling_length(u, s) + tiling_length(v, s)


# --- JSON -------------------------------------------------------------------

def test_json_roundtrip_small_and_large_alphabet():
    z = Substitution.from_images(["12", "1"])
    assert z.to_json() == {"m": 2, "images": ["12", "1"]}
    assert Substitution.from_json(z.to_json()) == z
    big = Substitution(tuple((b, 1) for b in range(1, 12)))
    js = big.to_json()
    assert js["images"][10] == "11,1"
    assert Substitution.from_json(js) == big


# --- good return words ------------------------------------------------------

def test_good_return_words_examples():
    z = Substitution.from_images(["11", "11"])
    assert (1,) in good_return_words(z, 3)
    assert good_return_words(Substitution.from_images(["2", "1"]), 4) == frozenset()


def test_good_return_words_fibonacci_cube():
    z = Substitution.from_images(["12", "1"])
    z3 = compose_all([z, z, z])
    assert good_return_words(z3, 8) == brute_good_return_words(z3, 8)


def _random_sub(rng, m, max_len):
    return Substitution(tuple(tuple(int(x) for x in rng.integers(1, m + 1, rng.integers(1, max_len + 1)))
                              for _ in range(m)))


def test_good_return_words_brute_force_random():
    rng = np.random.default_rng(11)
    for _ in range(150):
        z = _random_sub(rng, int(rng.integers(2, 5)), 8)
        for L in (2, 8):
            assert good_return_words(z, L) == brute_good_return_words(z, L)


def test_select_return_basis_cube_of_common_start():
    # eta(j) all start with 1, S_eta is invertible and eta^2 is positive
    eta = Substitution.from_images(["123", "1322", "133"])
    assert integer_det(subst_matrix(eta).tolist()) != 0
    zeta = compose_all([eta, eta, eta])
    gr = good_return_words(zeta)
    assert all(eta(j) in gr for j in (1, 2, 3))
    basis = select_return_basis(zeta)
    assert basis is not None
    P = [population_vector(w, 3).tolist() for w in basis]
    assert integer_det(P) != 0
    assert all(w in gr for w in basis)


def test_select_return_basis_failure():
    assert select_return_basis(Substitution.from_images(["2", "1"])) is None


def test_select_return_basis_is_shortlex_greedy():
    rng = np.random.default_rng(5)
    for _ in range(50):
        z = _random_sub(rng, 3, 8)
        basis = select_return_basis(z)
        words = sorted(brute_good_return_words(z, 8), key=lambda w: (len(w), w))
        vecs = [population_vector(w, 3).tolist() for w in words]
        full = bareiss_rank(vecs) == 3 if vecs else False
        assert (basis is not None) == full
        if basis is not None:
            assert integer_det([population_vector(w, 3).tolist() for w in basis]) != 0


def test_bareiss_and_det_match_numpy():
    rng = np.random.default_rng(2)
    for _ in range(50):
        A = rng.integers(-4, 5, (4, 4))
        assert integer_det(A.tolist()) == round(np.linalg.det(A))
        assert bareiss_rank(A.tolist()) == np.linalg.matrix_rank(A)
        B = A[:3]
        assert bareiss_rank(B.tolist()) == np.linalg.matrix_rank(B)


# --- col and c1 -------------------------------------------------------------

def test_c1_examples():
    colQt, c1 = c1_constant(np.ones((2, 2), dtype=int))
    assert colQt == 1 and c1 == 0.25
    assert col(np.array([[2, 1], [1, 1]]).T) == 2
    with pytest.raises(ValueError):
        c1_constant(np.array([[1, 0], [1, 1]]))


@given(st.integers(2, 4), st.data())
@settings(max_examples=40, deadline=None)
def test_col_contracts_and_c1_bounded(m, data):
    Q = np.array(data.draw(st.lists(st.integers(1, 9), min_size=m * m, max_size=m * m))).reshape(m, m)
    A = np.array(data.draw(st.lists(st.integers(0, 5), min_size=m * m, max_size=m * m))).reshape(m, m)
    A[0] += 1  # every column of A nonzero, so QA stays positive
    assert col(Q @ A) <= col(Q) + 1e-12
    assert 0 < c1_constant(Q)[1] <= 0.25
