import pytest
from hypothesis import given, settings, strategies as st

from flatf.ffmanifold import semisimple_frame
from flatf.genus0 import trivial_potential
from flatf.rmatrix import (
    MissingEulerDataError,
    apply_gauge,
    export,
    gauge_factor,
    is_constant_diagonal,
    load,
    perturbed,
    rmatrix_homogeneous,
    rmatrix_sequence,
    rmatrix_verify,
)

from conftest import two_spin, two_spin_euler


def odd_double_factorial(m):
    out = 1
    for k in range(1, 2 * m, 2):
        out *= k
    return out


@pytest.fixture(scope="module")
def frame():
    F = two_spin(12)
    return semisimple_frame(F, two_spin_euler(F))


@pytest.fixture(scope="module")
def homogeneous(frame):
    return rmatrix_homogeneous(frame, 5)


def test_base_values_are_signed_double_factorials(homogeneous):
    base = homogeneous.at_base().coeffs
    assert base[0] == ((1, 0), (0, 1))
    for m in range(1, 6):
        assert base[m] == ((0, 0), ((-1) ** m * odd_double_factorial(m), 0))


def test_homogeneous_solution_verifies(frame, homogeneous):
    rep = rmatrix_verify(homogeneous, frame)
    assert rep.ok
    assert len(rep.residuals) == 5 and len(rep.homogeneity) == 5


def test_orders_drop_by_one_per_step(homogeneous):
    orders = [homogeneous.order(k) for k in range(6)]
    assert all(a - b == 1 for a, b in zip(orders, orders[1:]))


def test_perturbation_detected(frame, homogeneous):
    rep = rmatrix_verify(perturbed(homogeneous, 1, 1, 0, 1), frame)
    assert rep.residuals[0] != 0
    assert not rep.ok


def test_free_gauge_differs_by_constant_diagonal(frame, homogeneous):
    free = rmatrix_sequence(frame, 5)
    assert all(r == 0 for r in rmatrix_verify(free, frame).residuals)
    assert is_constant_diagonal(gauge_factor(homogeneous, free))


def test_explicit_gauge_constants(frame, homogeneous):
    diag = [(1, 2), (0, 3), (5, 0)]
    free = rmatrix_sequence(frame, 4, diag_constants=diag)
    assert all(r == 0 for r in rmatrix_verify(free, frame).residuals)
    again = apply_gauge(homogeneous.truncated(4), diag)
    assert is_constant_diagonal(gauge_factor(free, again))


def test_homogeneity_needs_euler_data():
    F = two_spin(8)
    fr = semisimple_frame(F)
    R = rmatrix_sequence(fr, 2)
    with pytest.raises(MissingEulerDataError):
        rmatrix_verify(R, fr, homogeneity=True)


def test_trivial_manifold_has_identity_solution():
    fr = semisimple_frame(trivial_potential(2, 6))
    R = rmatrix_sequence(fr, 3)
    assert R.at_base().is_identity()
    assert rmatrix_verify(R, fr).ok


def test_one_dimensional_manifold():
    fr = semisimple_frame(trivial_potential(1, 6))
    assert rmatrix_sequence(fr, 3).at_base().is_identity()


def test_export_round_trip(homogeneous):
    again = load(export(homogeneous))
    assert again.coeffs == homogeneous.coeffs
    assert export(again) == export(homogeneous)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3)), min_size=1, max_size=3))
def test_any_constant_gauge_solves_the_recursion(frame, diag):
    R = rmatrix_sequence(frame, 3, diag_constants=diag)
    assert all(r == 0 for r in rmatrix_verify(R, frame).residuals)
