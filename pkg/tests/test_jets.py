from fractions import Fraction

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

import oracles
from poisson_rigidity.errors import PreconditionError, StructuralError, UnsupportedDegreeError
from poisson_rigidity.jets import (
    DROP_TOL,
    FormalDiffeo,
    PolyMultivector,
    compose,
    inverse,
    jacobi_defect,
    lie_series_flow,
    pullback,
    random_multivector,
    rescale_pullback,
    rescaled_family,
    schouten_bracket,
    wedge,
)
from poisson_rigidity.lie import linear_poisson, so3, su2

seeds = st.integers(0, 2**32 - 1)


def rand(seed, q, order=10, lo=0, hi=3, dim=3, scale=1.0):
    return random_multivector(dim, q, order, min_degree=lo, max_degree=hi, scale=scale,
                              rng=np.random.default_rng(seed))


def rel_close(a, b, rtol=1e-13):
    """Coefficientwise agreement relative to the largest coefficient."""
    def size(x):
        return x.max_abs() if isinstance(x, PolyMultivector) else float(np.max(np.abs(np.asarray(x.maps, float))))

    return a.allclose(b, atol=rtol * max(1.0, size(a), size(b)))


def vf(dim, order, terms, rational=False):
    return PolyMultivector.from_terms(dim, 1, {((i,), e): c for i, e, c in terms}, order, rational)


# representation ------------------------------------------------------------

def test_terms_are_canonical():
    W = PolyMultivector.from_terms(3, 2, {((1, 0), (1, 0, 0)): 2.0, ((0, 2), (0, 0, 0)): 0.0}, 4)
    assert W.terms() == {((0, 1), (1, 0, 0)): -2.0}


def test_degrees_above_truncation_are_dropped():
    W = PolyMultivector.from_terms(2, 1, {((0,), (3, 2)): 1.0, ((0,), (1, 0)): 1.0}, 4)
    assert W.terms() == {((0,), (1, 0)): 1.0}


def test_tiny_float_coefficients_are_dropped():
    W = PolyMultivector.from_terms(2, 1, {((0,), (1, 0)): DROP_TOL / 10, ((1,), (0, 1)): 1.0}, 3)
    assert list(W.terms()) == [((1,), (0, 1))]


@given(seeds, st.booleans())
def test_json_round_trip(seed, rational):
    W = rand(seed, 2, order=5)
    if rational:
        W = W.as_rational()
    back = PolyMultivector.from_json(W.to_json())
    assert back == W and back.rational == rational


def test_json_layout():
    W = PolyMultivector.from_terms(3, 2, {((0, 1), (0, 0, 1)): Fraction(1, 3)}, 2, rational=True)
    assert W.to_json() == {"dim": 3, "q": 2, "trunc_order": 2,
                           "terms": [{"indices": [0, 1], "exponents": [0, 0, 1], "coeff": "1/3"}]}


# Schouten bracket -----------------------------------------------------------

def test_bracket_constant_field_with_linear_bivector():
    d0 = vf(3, 4, [(0, (0, 0, 0), 1.0)])
    V = PolyMultivector.from_terms(3, 2, {((0, 1), (1, 0, 0)): 1.0}, 4)
    assert schouten_bracket(d0, V).terms() == {((0, 1), (0, 0, 0)): 1.0}


def test_linear_poisson_structure_is_poisson():
    pi = linear_poisson(so3(), 6, rational=True)
    assert schouten_bracket(pi, pi).is_zero()


def test_commutator_of_linear_fields():
    X = vf(3, 4, [(0, (0, 1, 0), 1.0)])  # x1 d0
    Y = vf(3, 4, [(1, (1, 0, 0), 1.0)])  # x0 d1
    expected = vf(3, 4, [(1, (0, 1, 0), 1.0), (0, (1, 0, 0), -1.0)])
    assert schouten_bracket(X, Y) == expected
    assert oracles.lie_bracket_vector_fields(X, Y).allclose(expected)


@settings(max_examples=8)
@given(seeds, seeds)
def test_vector_field_bracket_matches_coordinate_formula(s1, s2):
    X, Y = rand(s1, 1, order=8, hi=3), rand(s2, 1, order=8, hi=3)
    assert schouten_bracket(X, Y).allclose(oracles.lie_bracket_vector_fields(X, Y), atol=1e-10)


@settings(max_examples=8)
@given(seeds, seeds)
def test_vector_bivector_bracket_is_lie_derivative(s1, s2):
    X, P = rand(s1, 1, order=8), rand(s2, 2, order=8)
    assert schouten_bracket(X, P).allclose(oracles.lie_derivative_bivector(X, P), atol=1e-10)


@given(seeds, st.sampled_from([(0, 1), (1, 1), (1, 2), (2, 1), (2, 2), (0, 2), (1, 3)]))
def test_graded_antisymmetry(seed, qs):
    a, b = qs
    rng = np.random.default_rng(seed)
    W = random_multivector(3, a, 8, max_degree=3, rng=rng)
    V = random_multivector(3, b, 8, max_degree=3, rng=rng)
    sign = -((-1) ** ((a - 1) * (b - 1)))
    assert schouten_bracket(W, V).allclose(schouten_bracket(V, W) * sign, atol=1e-10)


@given(seeds)
def test_graded_jacobi_identity(seed):
    rng = np.random.default_rng(seed)
    P = random_multivector(3, 1, 10, max_degree=3, rng=rng)
    Q = random_multivector(3, 2, 10, max_degree=3, rng=rng)
    R = random_multivector(3, 2, 10, max_degree=3, rng=rng)
    lhs = schouten_bracket(P, schouten_bracket(Q, R))
    rhs = schouten_bracket(schouten_bracket(P, Q), R) + schouten_bracket(Q, schouten_bracket(P, R))
    assert lhs.allclose(rhs, atol=1e-9)


def test_bracket_errors():
    with pytest.raises(StructuralError):
        schouten_bracket(rand(0, 1, order=4), rand(1, 1, order=5))
    with pytest.raises(StructuralError):
        schouten_bracket(rand(0, 1, order=4), rand(1, 1, order=4, dim=2))
    with pytest.raises(UnsupportedDegreeError):
        schouten_bracket(rand(0, 2, order=4), rand(1, 3, order=4))


def test_wedge_is_graded_commutative():
    X, Y = rand(1, 1, order=6), rand(2, 1, order=6)
    assert wedge(X, Y).allclose(wedge(Y, X) * -1.0)


# Jacobi defect ----------------------------------------------------------------

def test_jacobi_defect_examples():
    pi = linear_poisson(so3(), 6)
    assert jacobi_defect(pi) == 0
    assert jacobi_defect(PolyMultivector.zero(3, 2, 6)) == 0
    bumped = pi + PolyMultivector.from_terms(3, 2, {((0, 1), (2, 0, 0)): 1.0}, 6)
    assert jacobi_defect(bumped) > 0


@given(seeds)
def test_jacobi_defect_matches_jacobiator(seed):
    P = linear_poisson(so3(), 6) + rand(seed, 2, order=6, lo=2, hi=2)
    brute = oracles.jacobiator(P)
    bracket = schouten_bracket(P, P)
    for (i, j, k), expr in brute.items():
        # [P, P] = 2 J in this normalisation
        assert oracles.from_sympy({(i, j, k): 2 * expr}, 3, 3, 6).allclose(
            PolyMultivector(3, 3, 6, bracket.coeffs), atol=1e-9)


# flows ----------------------------------------------------------------------

def test_flow_of_zero_is_identity():
    assert lie_series_flow(PolyMultivector.zero(3, 1, 6)) == FormalDiffeo.identity(3, 6)


def test_flow_of_x_squared():
    X = vf(1, 4, [(0, (2,), 1.0)])
    phi = lie_series_flow(X)
    assert phi.components[0].terms() == {((), (1,)): 1.0, ((), (2,)): 1.0, ((), (3,)): 1.0, ((), (4,)): 1.0}


def test_flow_rejects_nonvanishing_first_jet():
    with pytest.raises(PreconditionError):
        lie_series_flow(vf(2, 4, [(0, (1, 0), 1.0)]))


@given(seeds)
def test_flow_matches_ode(seed):
    X = rand(seed, 1, order=14, lo=2, hi=3, scale=0.3)
    phi = lie_series_flow(X)
    rng = np.random.default_rng(seed + 1)
    x0 = rng.normal(size=3)
    x0 *= 0.1 / np.linalg.norm(x0)
    assert np.allclose(oracles.eval_map(phi.maps, phi.basis, x0), oracles.flow_by_ode(X, x0), atol=1e-10)


@given(seeds)
def test_opposite_flows_cancel(seed):
    X = rand(seed, 1, order=8, lo=2, hi=4, scale=0.3)
    assert compose(lie_series_flow(X), lie_series_flow(X * -1.0)).allclose(FormalDiffeo.identity(3, 8), atol=1e-10)


# pullback -----------------------------------------------------------------

def test_pullback_by_identity():
    W = rand(3, 2, order=6)
    assert pullback(FormalDiffeo.identity(3, 6), W) == W


@pytest.mark.parametrize("t", [Fraction(1, 2), Fraction(2), Fraction(3, 7)])
def test_pullback_by_scaling_divides_linear_structure(t):
    pi = linear_poisson(so3(), 5, rational=True)
    assert pullback(FormalDiffeo.scaling(t, 3, 5, rational=True), pi) == pi * (1 / t)


@settings(max_examples=8)
@given(seeds, seeds)
def test_pullback_by_flow_matches_lie_series(s1, s2):
    X = rand(s1, 1, order=9, lo=2, hi=3, scale=0.5)
    W = rand(s2, 2, order=9, lo=1, hi=4)
    assert rel_close(pullback(lie_series_flow(X), W), oracles.lie_series_pullback(X, W))


@settings(max_examples=8)
@given(seeds, seeds)
@example(43799686, 43799686)
def test_pullback_with_constant_term_is_exact_below_top_degree(s1, s2):
    # the degree-N coefficient would need the degree N+1 part of the map;
    # degree-8 terms come from eight nested brackets, so roundoff reaches ~1e-13 relative
    X = rand(s1, 1, order=9, lo=2, hi=3, scale=0.5)
    W = rand(s2, 2, order=9, lo=0, hi=4)
    top = W.trunc_order - 1
    assert rel_close(pullback(lie_series_flow(X), W).truncated(top), oracles.lie_series_pullback(X, W).truncated(top),
                     rtol=1e-12)


def test_pullback_with_constant_term_exact_rational():
    X = rand(3, 1, order=7, lo=2, hi=3, scale=0.5).as_rational()
    W = rand(4, 2, order=7, lo=0, hi=3).as_rational()
    got = pullback(lie_series_flow(X), W)
    expected = oracles.lie_series_pullback(X, W)
    assert got.truncated(6) == expected.truncated(6)
    assert got.degree_part(7) != expected.degree_part(7)


@given(seeds, seeds, st.integers(2, 4))
def test_pullback_second_order_remainder_filtration(s1, s2, m):
    X = rand(s1, 1, order=12, lo=m, hi=m)
    W = rand(s2, 2, order=12, lo=1, hi=2)
    rest = pullback(lie_series_flow(X), W) - W - schouten_bracket(X, W)
    assert rest.lowest_degree(1e-10) >= 2 * m - 2 + W.lowest_degree()


@given(seeds, seeds)
def test_pullback_third_bound_filtration(s1, s2):
    X = rand(s1, 1, order=10, lo=2, hi=2)
    W = linear_poisson(so3(), 10)
    phi = lie_series_flow(X)
    rest = pullback(phi, W) - W - pullback(phi, schouten_bracket(X, W))
    assert rest.lowest_degree(1e-10) >= 3


@settings(max_examples=8)
@given(seeds)
def test_pullback_is_functorial(seed):
    rng = np.random.default_rng(seed)
    X = random_multivector(3, 1, 8, min_degree=2, max_degree=3, scale=0.5, rng=rng)
    Y = random_multivector(3, 1, 8, min_degree=2, max_degree=3, scale=0.5, rng=rng)
    W = random_multivector(3, 2, 8, min_degree=1, max_degree=3, rng=rng)
    phi, chi = lie_series_flow(X), lie_series_flow(Y)
    assert rel_close(pullback(compose(phi, chi), W), pullback(chi, pullback(phi, W)))


@settings(max_examples=8)
@given(seeds)
def test_pullback_is_a_bracket_homomorphism(seed):
    rng = np.random.default_rng(seed)
    X = random_multivector(3, 1, 8, min_degree=2, max_degree=3, rng=rng)
    W = random_multivector(3, 1, 8, min_degree=1, max_degree=3, rng=rng)
    V = random_multivector(3, 2, 8, min_degree=1, max_degree=3, rng=rng)
    phi = lie_series_flow(X)
    assert rel_close(pullback(phi, schouten_bracket(W, V)), schouten_bracket(pullback(phi, W), pullback(phi, V)))


def test_pullback_rejects_singular_linear_part():
    with pytest.raises(PreconditionError):
        FormalDiffeo.linear(np.diag([1.0, 0.0, 1.0]), 4)


# composition and inverse ----------------------------------------------------

def test_composition_identities():
    chi = lie_series_flow(rand(4, 1, order=6, lo=2, hi=3))
    ident = FormalDiffeo.identity(3, 6)
    assert compose(ident, chi) == chi and compose(chi, ident) == chi
    t = Fraction(3, 2)
    mu = FormalDiffeo.scaling(t, 3, 6, rational=True)
    assert compose(mu, FormalDiffeo.scaling(1 / t, 3, 6, rational=True)) == FormalDiffeo.identity(3, 6, rational=True)


@given(seeds)
def test_composition_is_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (lie_series_flow(random_multivector(3, 1, 7, min_degree=2, max_degree=3, rng=rng)) for _ in range(3))
    assert rel_close(compose(compose(a, b), c), compose(a, compose(b, c)))


@given(seeds)
def test_inverse_of_flow_is_reverse_flow(seed):
    X = rand(seed, 1, order=8, lo=2, hi=3, scale=0.3)
    assert rel_close(inverse(lie_series_flow(X)), lie_series_flow(X * -1.0))


def test_compose_mismatch():
    with pytest.raises(StructuralError):
        compose(FormalDiffeo.identity(3, 5), FormalDiffeo.identity(3, 6))


# rescaling ------------------------------------------------------------------

@pytest.mark.parametrize("t", [Fraction(1, 2), Fraction(2), Fraction(5, 3)])
def test_rescale_linear_structure(t):
    pi = linear_poisson(su2(), 6, rational=True)
    assert rescale_pullback(t, pi) == pi * (1 / t)
    assert rescale_pullback(1, pi) == pi


def test_rescale_exponent_bookkeeping():
    W = PolyMultivector.from_terms(3, 2, {((0, 1), (2, 0, 0)): 1.0}, 4)
    assert rescale_pullback(2.0, W) == W
    with pytest.raises(PreconditionError):
        rescale_pullback(0.0, W)


def test_rescaled_family_examples():
    pi = linear_poisson(so3(), 6, rational=True)
    Q = PolyMultivector.from_terms(3, 2, {((0, 1), (1, 1, 0)): 3, ((1, 2), (0, 0, 2)): -1}, 6, rational=True)
    t = Fraction(2, 5)
    assert rescaled_family(pi, t) == pi
    assert rescaled_family(pi + Q, t) == pi + Q * t
    assert rescaled_family(pi + Q, 1) == pi + Q
    with pytest.raises(PreconditionError):
        rescaled_family(pi + PolyMultivector.from_terms(3, 2, {((0, 1), (0, 0, 0)): 1}, 6, rational=True), t)


@given(seeds, st.floats(0.1, 3.0))
def test_rescaled_family_stays_poisson(seed, t):
    X = rand(seed, 1, order=8, lo=2, hi=3, scale=0.5)
    P = pullback(lie_series_flow(X), linear_poisson(so3(), 8))
    Pt = rescaled_family(P, t)
    assert jacobi_defect(Pt) <= 1e-13 * max(P.max_abs(), Pt.max_abs()) ** 2
