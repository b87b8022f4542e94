from math import factorial, prod

import pytest
from gmpy2 import mpq
from hypothesis import given, settings, strategies as st

from flatf import psikappa
from flatf.psikappa import (
    UnstableError,
    kappa_integral,
    psi_integral,
    vertex_integral,
    vertex_integral_kappa,
)


@pytest.mark.parametrize(
    "g,a,value",
    [
        (0, (0, 0, 0), mpq(1)),
        (1, (1,), mpq(1, 24)),
        (2, (4,), mpq(1, 1152)),
        (1, (0, 2), mpq(1, 24)),
        (1, (1, 1), mpq(1, 24)),
        (2, (2, 3), mpq(29, 5760)),
        (2, (1, 4), mpq(1, 384)),
        (2, (2, 2, 2), mpq(7, 240)),
        (3, (7,), mpq(1, 82944)),
    ],
)
def test_known_values(g, a, value):
    assert psi_integral(g, a) == value


@pytest.mark.parametrize("g", range(1, 5))
def test_one_point_series(g):
    assert psi_integral(g, (3 * g - 2,)) == mpq(1, 24**g * factorial(g))


@st.composite
def genus_zero_key(draw):
    n = draw(st.integers(3, 9))
    a = [0] * n
    for _ in range(n - 3):
        a[draw(st.integers(0, n - 1))] += 1
    return tuple(a)


@settings(max_examples=60, deadline=None)
@given(genus_zero_key())
def test_genus_zero_multinomial(a):
    n = len(a)
    assert psi_integral(0, a) == mpq(factorial(n - 3), prod(factorial(x) for x in a))


@st.composite
def stable_key(draw, max_dim=7):
    g = draw(st.integers(0, 3))
    n = draw(st.integers(1 if g else 3, 6))
    dim = 3 * g - 3 + n
    if dim > max_dim or dim < 0:
        n = 3 if g == 0 else 1
        dim = 3 * g - 3 + n
    a = [0] * n
    for _ in range(dim):
        a[draw(st.integers(0, n - 1))] += 1
    return g, tuple(a)


@settings(max_examples=80, deadline=None)
@given(stable_key())
def test_string_equation(key):
    g, a = key
    lhs = psi_integral(g, a + (0,))
    rhs = sum(psi_integral(g, a[:i] + (x - 1,) + a[i + 1 :]) for i, x in enumerate(a) if x)
    if g == 0 and len(a) == 3:
        return
    assert lhs == rhs


@settings(max_examples=80, deadline=None)
@given(stable_key())
def test_dilaton_equation(key):
    g, a = key
    assert psi_integral(g, a + (1,)) == (2 * g - 2 + len(a)) * psi_integral(g, a)


@settings(max_examples=60, deadline=None)
@given(stable_key(), st.randoms(use_true_random=False))
def test_symmetric_in_points(key, rnd):
    g, a = key
    b = list(a)
    rnd.shuffle(b)
    assert psi_integral(g, b) == psi_integral(g, a)


def test_wrong_dimension_is_zero():
    assert psi_integral(1, (2,)) == 0
    assert psi_integral(0, (1, 0, 0)) == 0


def test_invalid_arguments():
    with pytest.raises(UnstableError):
        psi_integral(0, (0, 0))
    with pytest.raises(UnstableError):
        psi_integral(1, ())
    with pytest.raises(ValueError):
        psi_integral(1, (-1, 2))
    with pytest.raises(ValueError):
        vertex_integral(1, (1,), (1,))


@pytest.mark.parametrize(
    "e,value",
    [((3,), mpq(1, 1152)), ((1, 2), mpq(1, 240)), ((1, 1, 1), mpq(43, 2880))],
)
def test_kappa_integrals_on_genus_two(e, value):
    assert kappa_integral(2, (), e) == value


def test_vertex_spot_values():
    assert vertex_integral(1, (0,), (2,)) == mpq(1, 24)
    assert vertex_integral(0, (0, 0, 0, 0), (2,)) == 1
    assert vertex_integral(0, (0, 0, 0), ()) == 1


def test_forgotten_points_match_marked_points():
    # pushing forward psi^b from a point with b >= 2 equals marking it
    for g, a, b in [(1, (0,), (2, 2)), (2, (1, 0), (3,)), (0, (0, 0, 0, 0), (2, 2))]:
        assert vertex_integral(g, a, b) == psi_integral(g, a + b)


def _keys(max_dim):
    for g in range(3):
        for n in range(0, 6):
            if 2 * g - 2 + n <= 0:
                continue
            for m in range(0, 4):
                for total in range(max_dim + 1):
                    yield from _splits(g, n, m, total)


def _splits(g, n, m, total):
    from itertools import combinations_with_replacement

    for a in combinations_with_replacement(range(total + 1), n):
        for b in combinations_with_replacement(range(2, total + 2), m):
            if sum(a) + sum(b) - m == 3 * g - 3 + n and sum(a) + sum(b) - m == total:
                yield g, a, b


def test_two_vertex_routes_agree_small():
    keys = [k for k in _keys(5)]
    assert len(keys) > 50
    for g, a, b in keys:
        assert vertex_integral(g, a, b) == vertex_integral_kappa(g, a, b)


def test_cache_round_trip():
    psi_integral(2, (2, 3))
    text = psikappa.dump_cache()
    psikappa.clear_cache()
    assert psikappa.load_cache(text) == len(text.splitlines())
    assert psikappa.dump_cache() == text
    assert psi_integral(2, (2, 3)) == mpq(29, 5760)
