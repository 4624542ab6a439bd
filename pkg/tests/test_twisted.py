import cmath
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from rauzy_spectra.bv import PathPrefix, SubstitutionSequence, canonical_sequence, horizontal_word, level_word
from rauzy_spectra.samples import h2_canonical_sample
from rauzy_spectra.substitution import Substitution, compose, compose_all, population_vector, subst_matrix
from rauzy_spectra.twisted import (
    CylindricalFunction, DiophantineData, ModularOrbit, NotCanonicalError, PiecewisePolynomial, dioph_bound,
    growth_fit, phi_all, phi_direct, phi_prefix_sums, pi_product, twist_matrix, twist_sequence,
    twisted_birkhoff, twisted_series,
)


def subs(m, max_len=4):
    return st.lists(st.lists(st.integers(1, m), min_size=1, max_size=max_len), min_size=m, max_size=m).map(
        Substitution.from_images)


def rand_sub(rng, m, lo=1, hi=4):
    return Substitution(tuple(tuple(int(x) for x in rng.integers(1, m + 1, rng.integers(lo, hi + 1)))
                              for _ in range(m)))


def phi_oracle(a, v, s, omega):
    """Term by term with exact rational prefix lengths."""
    total, L = 0j, Fraction(0)
    for c in v:
        if c == a:
            total += cmath.exp(-2j * math.pi * float((Fraction(omega) * L) % 1))
        L += Fraction(s[c - 1])
    return total


# --- Phi --------------------------------------------------------------------

def test_phi_examples():
    assert abs(phi_direct(1, [1, 2, 1], [1, 1], 0.25)) < 1e-15
    assert phi_direct(2, [1, 2, 2, 1, 2], [0.3, 0.9], 0.0) == 3
    assert phi_direct(1, [], [1.0], 0.3) == 0


@given(st.lists(st.integers(1, 3), min_size=1, max_size=40), st.lists(st.integers(1, 3), max_size=40),
       st.floats(-3, 3), st.integers(1, 3))
@settings(max_examples=80, deadline=None)
def test_phi_concatenation(u, v, omega, a):
    s = [0.37, 1.21, 0.05]
    lhs = phi_direct(a, u + v, s, omega)
    len_u = sum(s[c - 1] for c in u)
    rhs = phi_direct(a, u, s, omega) + cmath.exp(-2j * math.pi * omega * len_u) * phi_direct(a, v, s, omega)
    assert abs(lhs - rhs) < 1e-10


@given(st.lists(st.integers(1, 3), min_size=1, max_size=200), st.floats(-5, 5))
@settings(max_examples=50, deadline=None)
def test_phi_all_matches_oracle(v, omega):
    s = [Fraction(3, 7), Fraction(5, 11), Fraction(1, 3)]
    sf = [float(x) for x in s]
    got = phi_all(v, sf, omega, 3)
    for a in (1, 2, 3):
        assert abs(got[a - 1] - phi_oracle(a, v, s, omega)) < 1e-9
    pref = phi_prefix_sums(np.array(v), np.array(sf), omega, 3)
    np.testing.assert_allclose(pref[-1], got, atol=1e-9)
    np.testing.assert_allclose(pref[len(v) // 2], phi_all(v[: len(v) // 2], sf, omega, 3), atol=1e-9)


# --- twist matrices ---------------------------------------------------------

@given(subs(3), subs(3), st.floats(0, 10))
@settings(max_examples=50, deadline=None)
def test_twist_matrix_zero_frequency_and_modulus(x1, x2, omega):
    s = [0.2, 0.5, 0.3]
    S2t = subst_matrix(x2).T
    np.testing.assert_array_equal(twist_matrix(x1, x2, s, 0.0), S2t)
    assert (np.abs(twist_matrix(x1, x2, s, omega)) <= S2t + 1e-12).all()


@given(subs(3), subs(3), subs(3), st.floats(-4, 4))
@settings(max_examples=80, deadline=None)
def test_twist_matrix_composition(x1, x2, x3, omega):
    s = [0.31, 0.83, 0.17]
    lhs = twist_matrix(x1, compose(x2, x3), s, omega)
    rhs = twist_matrix(compose(x1, x2), x3, s, omega) @ twist_matrix(x1, x2, s, omega)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_twist_matrix_entries_are_phi():
    x1 = Substitution.from_images(["12", "21", "3"])
    x2 = Substitution.from_images(["132", "21", "313"])
    s = np.array([0.4, 0.35, 0.25])
    roof = subst_matrix(x1).T @ s
    M = twist_matrix(x1, x2, s, 1.7)
    for b in (1, 2, 3):
        for c in (1, 2, 3):
            assert abs(M[b - 1, c - 1] - phi_direct(c, x2(b), roof, 1.7)) < 1e-12


# --- products ---------------------------------------------------------------

def random_seq(seed, n=6, m=3):
    rng = np.random.default_rng(seed)
    return SubstitutionSequence([rand_sub(rng, m) for _ in range(n)])


@pytest.mark.parametrize("seed", range(20))
def test_pi_product_matches_direct_sums(seed):
    seq = random_seq(seed)
    rng = np.random.default_rng(seed)
    s = rng.dirichlet(np.ones(3))
    omega = float(rng.uniform(-20, 20))
    Pi = pi_product(seq, s, omega)
    np.testing.assert_array_equal(Pi[0], np.eye(3))
    for n in range(1, 7):
        for b in (1, 2, 3):
            if seq.heights(n)[b - 1] > 10_000:
                continue
            w = horizontal_word(seq, b, n)
            for a in (1, 2, 3):
                assert abs(Pi[n][b - 1, a - 1] - phi_direct(a, w, s, omega)) < 1e-9
    # Pi_n = M_n Pi_{n-1}, recomputed with independently built twist matrices
    Ms = twist_sequence(seq, s, omega)
    for n in range(1, 7):
        M = twist_matrix(seq.prefix_product(n - 1) if n > 1 else np.eye(3, dtype=int), seq[n], s, omega)
        np.testing.assert_allclose(M, Ms[n - 1], atol=1e-9)
        np.testing.assert_allclose(Pi[n], M @ Pi[n - 1], atol=1e-9)


def test_pi_product_zero_frequency():
    seq = random_seq(3, n=8)
    Pi = pi_product(seq, [0.2, 0.3, 0.5], 0.0)
    for n in range(9):
        np.testing.assert_array_equal(Pi[n].real, seq.prefix_product(n).T.astype(float))


# --- modular orbit ----------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_modular_orbit_matches_exact_rationals(seed):
    rng = np.random.default_rng(seed)
    seq = SubstitutionSequence([rand_sub(rng, 3, 2, 4) for _ in range(30)])
    s = [Fraction(int(rng.integers(1, 1000)), int(rng.integers(1, 1000))) for _ in range(3)]
    omega = Fraction(int(rng.integers(1, 10 ** 6)), int(rng.integers(1, 10 ** 6)))
    orb = ModularOrbit(seq, s, omega)
    for k in range(31):
        roof = seq.prefix_product(k).T @ np.array(s, dtype=object)
        assert orb.exact(k) == [(omega * x) % 1 for x in roof]
        for v in ((1,), (2, 3), (3, 1, 1)):
            length = sum(roof[c - 1] for c in v)
            r = (omega * length) % 1
            assert orb.dist(v, k) == float(min(r, 1 - r))


def test_modular_orbit_float_input_is_dyadic():
    seq = random_seq(1, n=20)
    orb = ModularOrbit(seq, [0.1, 0.2, 0.7], 0.3)
    roof = seq.prefix_product(20).T @ np.array([Fraction(0.1), Fraction(0.2), Fraction(0.7)], dtype=object)
    assert orb.exact(20) == [(Fraction(0.3) * x) % 1 for x in roof]


# --- Diophantine bounds -----------------------------------------------------

Q = compose_all([Substitution.from_images(["123", "1322", "133"])] * 2)


def canonical_random(seed, n):
    rng = np.random.default_rng(seed)
    xis = [rand_sub(rng, 3, 1, 3) for _ in range(n)]
    return canonical_sequence(Q, xis)


def test_dioph_requires_canonical_form():
    with pytest.raises(NotCanonicalError):
        DiophantineData(random_seq(0), [0.3, 0.3, 0.4], 0.5)
    bad = canonical_sequence(Substitution.from_images(["1", "2", "3"]), [Substitution.identity(3)])
    with pytest.raises(NotCanonicalError):
        DiophantineData(bad, [0.3, 0.3, 0.4], 0.5)


def test_dioph_zero_frequency():
    seq = canonical_random(0, 3)
    b = dioph_bound(seq, [0.3, 0.3, 0.4], 0.0, N=2)
    assert b.product == 1.0 and (b.factors == 1).all()
    assert b.bound == max(seq.prefix_product(2).sum(axis=0))
    Pi = pi_product(seq, [0.3, 0.3, 0.4], 0.0, 2)[2]
    assert np.abs(Pi).max() <= b.bound


@pytest.mark.parametrize("seed", range(10))
def test_dioph_factors_in_range(seed):
    rng = np.random.default_rng(seed)
    d = DiophantineData(canonical_random(seed, 4), rng.dirichlet(np.ones(3)), float(rng.uniform(0.1, 5)))
    f = np.array([d.factor(k) for k in range(5)])
    assert ((1 - d.c1 / 4 - 1e-15 <= f) & (f <= 1)).all()
    assert d.returns == d.returns and all(w for w in d.returns)


def test_dioph_bound_dominates_phi():
    rng = np.random.default_rng(0)
    violations = 0
    cases = 0
    while cases < 1000:
        seq = canonical_random(int(rng.integers(1 << 30)), 3)
        s = rng.dirichlet(np.ones(3))
        omega = float(rng.uniform(0.05, 20))
        data = DiophantineData(seq, s, omega, depth=3)
        Pi = pi_product(seq, s, omega, 3)
        for N in (1, 2, 3):
            bound = data.product_bound(N).bound
            for _ in range(4):
                a, b = rng.integers(1, 4, 2)
                cases += 1
                violations += abs(Pi[N][b - 1, a - 1]) > bound + 1e-12
    assert violations == 0


def test_dioph_return_families():
    seq = canonical_random(4, 2)
    basis = DiophantineData(seq, [0.3, 0.3, 0.4], 1.3)
    full = DiophantineData(seq, [0.3, 0.3, 0.4], 1.3, returns="all")
    assert set(basis.returns) <= set(full.returns)
    # a larger family can only shrink the factors
    assert all(full.factor(k) <= basis.factor(k) + 1e-15 for k in range(3))
    with pytest.raises(ValueError):
        DiophantineData(seq, [0.3, 0.3, 0.4], 1.3, returns=[(2, 2, 2, 2, 2)])


@pytest.mark.parametrize("seed", range(6))
def test_prefix_bound_dominates_prefix_sums(seed):
    rng = np.random.default_rng(seed)
    seq = canonical_random(100 + seed, 3)
    s = rng.dirichlet(np.ones(3))
    omega = float(rng.uniform(0.1, 10))
    data = DiophantineData(seq, s, omega)
    bound = data.prefix_bound(0, 1).bound
    for b in (1, 2, 3):
        w = level_word(seq, [b], 1, 2)
        pref = phi_prefix_sums(w, s, omega, 3)
        assert np.abs(pref).max() <= bound + 1e-9
    with pytest.raises(IndexError):
        data.prefix_bound(0, 3)


def test_level_bound_matches_shifted_product_bound():
    seq = canonical_random(7, 4)
    s = np.array([0.3, 0.3, 0.4])
    d = DiophantineData(seq, s, 2.1)
    c = d.level_bound(1, 3)
    assert c.bound == pytest.approx(max(seq.product(2, 3).sum(axis=0)) * d.product(2, 2))


# --- profiles ---------------------------------------------------------------

@given(st.floats(-30, 30), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_profile_transform_matches_quadrature(omega, lo, hi):
    lo, hi = min(lo, hi) * 1.5, max(lo, hi) * 1.5
    psi = PiecewisePolynomial([0, 0.4, 1.5], [[1, -2, 0.5, 3], [0.2, 0, 1]])
    got = psi.integral_exp(omega, lo, hi)[0]
    re = quad(lambda t: psi(t) * math.cos(2 * math.pi * omega * t), lo, hi, points=[0.4], limit=200)[0]
    im = quad(lambda t: -psi(t) * math.sin(2 * math.pi * omega * t), lo, hi, points=[0.4], limit=200)[0]
    assert abs(got - complex(re, im)) < 1e-9


def test_profile_degree_cap():
    with pytest.raises(ValueError):
        PiecewisePolynomial([0, 1], [[1, 1, 1, 1, 1]])


# --- twisted Birkhoff integrals ---------------------------------------------

@pytest.fixture(scope="module")
def sample():
    return h2_canonical_sample(0, 8)


def level_function(seq, s, ell, rng):
    roof = np.asarray(seq.prefix_product(ell).T @ np.asarray(s), dtype=float) if ell else np.asarray(s)
    profs = []
    for a in range(seq.m):
        L = float(roof[a])
        profs.append(PiecewisePolynomial([0, L / 3, L], [rng.normal(size=3) / [1, L, L * L],
                                                         [float(rng.normal())]]))
    return CylindricalFunction(ell, profs)


def test_zero_frequency_indicator_counts_time(sample):
    seq, s = sample.seq, sample.s
    p = PathPrefix.minimal(seq, 1, 4)
    f = CylindricalFunction(0, [PiecewisePolynomial.constant(1.0 if a == 1 else 0.0, s[a]) for a in range(4)])
    R = 500.0
    val = twisted_birkhoff(seq, p, f, 0.0, R, s, mode="quadrature").quadrature
    from rauzy_spectra.bv import suspension_itinerary
    it = suspension_itinerary(seq, p, s, R)
    sel = it.letters == 2
    expected = np.minimum(it.starts[sel] + it.durations[sel], R) - it.starts[sel]
    assert abs(val - expected.sum()) < 1e-8


@pytest.mark.parametrize("seed,ell", [(0, 0), (1, 1), (2, 1), (3, 2), (4, 0)])
def test_formula_matches_quadrature(sample, seed, ell):
    rng = np.random.default_rng(seed)
    seq, s = sample.seq, sample.s
    p = PathPrefix.minimal(seq, 1, 4)
    f = level_function(seq, s, ell, rng)
    for R in (37.0, 1e3, 1e4):
        omega = float(rng.uniform(0.25, 4))
        out = twisted_birkhoff(seq, p, f, omega, R, s)
        ref = out.quadrature_snapped
        assert abs(out.formula - ref) <= 1e-6 * max(abs(ref), 1.0)
        sup = max(np.abs(prof(np.linspace(0, prof.length, 200))).max() for prof in f.profiles)
        assert abs(out.quadrature) <= 1.01 * sup * R
        assert 0 <= out.snap_gap <= f.profiles[0].length + max(pr.length for pr in f.profiles)


def test_series_matches_pointwise(sample):
    rng = np.random.default_rng(9)
    seq, s = sample.seq, sample.s
    p = PathPrefix.minimal(seq, 1, 4)
    f = level_function(seq, s, 0, rng)
    omegas = [0.3, 1.7]
    R_grid = np.geomspace(1e2, 1e4, 5)
    vals, R_snap = twisted_series(seq, p, f, omegas, R_grid, s)
    for i, om in enumerate(omegas):
        for j, R in enumerate(R_grid):
            ref = twisted_birkhoff(seq, p, f, om, R, s, mode="formula")
            assert ref.R_snapped == R_snap[j]
            assert abs(vals[i, j] - ref.formula) < 1e-6 * max(1, abs(ref.formula))


def test_callable_profile_quadrature_only(sample):
    seq, s = sample.seq, sample.s
    p = PathPrefix.minimal(seq, 1, 4)
    f_poly = CylindricalFunction(0, [PiecewisePolynomial([0, s[a]], [[0.5, 2.0]]) for a in range(4)])
    f_call = CylindricalFunction(0, [lambda t: 0.5 + 2.0 * t] * 4)
    a = twisted_birkhoff(seq, p, f_poly, 0.9, 200.0, s, mode="quadrature").quadrature
    b = twisted_birkhoff(seq, p, f_call, 0.9, 200.0, s, mode="quadrature").quadrature
    assert abs(a - b) < 1e-9
    with pytest.raises(TypeError):
        twisted_birkhoff(seq, p, f_call, 0.9, 200.0, s, mode="formula")


# --- growth fit -------------------------------------------------------------

def test_growth_fit_synthetic():
    R = np.geomspace(10, 1e5, 12)
    a, c = growth_fit(R, R)
    assert a == pytest.approx(1, abs=1e-12) and c == pytest.approx(1, rel=1e-10)
    a, c = growth_fit(R, 3 * R ** 0.5)
    assert abs(a - 0.5) < 1e-10 and abs(c - 3) < 1e-10
    a, _ = growth_fit(R, np.full(12, 7.0))
    assert abs(a) < 1e-12


def test_growth_fit_degenerate():
    with pytest.raises(ValueError):
        growth_fit(np.geomspace(10, 100, 12), np.ones(12))
    with pytest.raises(ValueError):
        growth_fit(np.geomspace(10, 1e5, 5), np.ones(5))


def test_twist_matrix_has_no_drift_on_long_images(sample):
    # level-1 images of a spliced sample run to about 10^4 letters
    seq, s = sample.seq, sample.s
    Pi = pi_product(seq, s, 1.37, 1)
    for b in (1, 2, 3, 4):
        w = horizontal_word(seq, b, 1)
        assert len(w) > 2000
        direct = [phi_direct(a, w, s, 1.37) for a in (1, 2, 3, 4)]
        assert np.abs(Pi[1][b - 1] - direct).max() < 1e-10
        assert np.abs(phi_all(w, s, 1.37) - direct).max() < 1e-10
