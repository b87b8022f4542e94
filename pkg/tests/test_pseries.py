import pytest
from gmpy2 import mpq
from hypothesis import given, settings, strategies as st

from flatf.pseries import (
    Jet,
    MatrixZSeries,
    NotInGroupError,
    NotInvertibleError,
    SeriesStructureError,
    TruncatedSeries,
    mat_identity,
    mat_mul,
)


def t(D=4):
    return TruncatedSeries.variable(0, 1, D)


def test_difference_of_squares():
    x = t(3)
    assert (1 + x) * (1 - x) == 1 - x * x


def test_derivative_of_half_square():
    x = t(3)
    assert (x * x).scale(mpq(1, 2)).partial(0) == x


def test_truncated_product():
    x = t(2)
    assert (1 + x + x * x) * (1 + x) == 1 + 2 * x + 2 * x * x


def test_geometric_inverse():
    x = t(5)
    inv = (1 - x).invert()
    assert inv == sum((x**k for k in range(6)), x.zero_like())


def test_constant_inverse_and_square_inverse():
    x = t(2)
    assert x.constant_like(2).invert() == mpq(1, 2)
    assert (1 + 2 * x + x * x).invert() == 1 - 2 * x + 3 * x * x


def test_non_invertible():
    with pytest.raises(NotInvertibleError):
        t(3).invert()


def test_rebase_square():
    s = TruncatedSeries(1, {(2,): 1}, max_degree=4)
    x = TruncatedSeries.variable(0, 1, 4, base_point=(1,))
    assert s.rebase((1,)) == 1 + 2 * x + x * x


def test_rebase_inverse_square():
    # 1/t^2 around t=1: binomial series 1 - 2s + 3s^2
    s = TruncatedSeries.variable(0, 1, 2, base_point=(1,))
    tt = s + 1
    assert (tt * tt).invert() == 1 - 2 * s + 3 * s * s


def test_rebase_by_zero_is_identity():
    s = TruncatedSeries(2, {(1, 2): 3, (0, 1): -1}, max_degree=5)
    assert s.rebase((0, 0)) == s


def test_mismatched_base_points():
    a = TruncatedSeries.variable(0, 1, 3)
    b = TruncatedSeries.variable(0, 1, 3, base_point=(1,))
    with pytest.raises(SeriesStructureError):
        a + b


def test_mixed_degree_takes_minimum():
    a = TruncatedSeries.variable(0, 1, 3)
    b = TruncatedSeries.variable(0, 1, 5)
    assert (a * b).max_degree == 3


def test_neumann_inverse():
    R1 = ((0, 1), (2, 0))
    A = MatrixZSeries([mat_identity(2), R1], 2)
    inv = A.inverse()
    sq = ((2, 0), (0, 2))
    assert inv == MatrixZSeries([mat_identity(2), ((0, -1), (-2, 0)), sq], 2)
    assert (A * inv).is_identity() and (inv * A).is_identity()


def test_identity_product():
    A = MatrixZSeries([mat_identity(2), ((1, 2), (3, 4))], 1)
    assert MatrixZSeries.identity(2, 1) * A == A


def test_nilpotent_coefficients_multiply_to_zero():
    R1 = ((0, 0), (-1, 0))
    R2 = ((0, 0), (3, 0))
    assert all(x == 0 for row in mat_mul(R1, R2) for x in row)
    A = MatrixZSeries([mat_identity(2), R1], 1)
    assert (A * A).coefficient(1) == ((0, 0), (-2, 0))


def test_singular_leading_coefficient():
    with pytest.raises((NotInGroupError, NotInvertibleError)):
        MatrixZSeries([((1, 1), (1, 1)), ((0, 1), (0, 0))], 1).inverse()


def test_jet_arithmetic():
    a = Jet(2, (1, 0))
    b = Jet(3, (0, 1))
    assert a * b == Jet(6, (3, 2))
    assert (a / b).value == mpq(2, 3)


coef = st.fractions(min_value=-5, max_value=5, max_denominator=6)


@st.composite
def series(draw, n=2, D=4):
    terms = draw(
        st.dictionaries(
            st.tuples(*[st.integers(0, D) for _ in range(n)]).filter(lambda e: sum(e) <= D),
            coef,
            max_size=6,
        )
    )
    return TruncatedSeries(n, {k: mpq(v.numerator, v.denominator) for k, v in terms.items()}, max_degree=D)


@settings(max_examples=40, deadline=None)
@given(series(), series(), series())
def test_ring_axioms(a, b, c):
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c
    assert a * b == b * a


@settings(max_examples=40, deadline=None)
@given(series(), coef)
def test_double_inverse(a, c0):
    a = a - a.constant_term() + (mpq(c0.numerator, c0.denominator) or 1)
    assert a.invert().invert() == a
    assert a * a.invert() == 1


@settings(max_examples=30, deadline=None)
@given(series(), st.tuples(coef, coef))
def test_rebase_round_trip(a, p):
    p = tuple(mpq(x.numerator, x.denominator) for x in p)
    assert a.rebase(p).rebase((0, 0)) == a


@settings(max_examples=30, deadline=None)
@given(series())
def test_serialization_round_trip(a):
    assert TruncatedSeries.from_dict(a.to_dict()) == a
    assert TruncatedSeries.from_text(a.to_text()) == a


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(coef, coef, coef, coef), min_size=1, max_size=3))
def test_group_inverse_both_sides(mats):
    coeffs = [mat_identity(2)] + [
        ((mpq(a.numerator, a.denominator), mpq(b.numerator, b.denominator)),
         (mpq(c.numerator, c.denominator), mpq(d.numerator, d.denominator)))
        for a, b, c, d in mats
    ]
    A = MatrixZSeries(coeffs, len(mats))
    inv = A.inverse()
    assert (A * inv).is_identity()
    assert (inv * A).is_identity()
