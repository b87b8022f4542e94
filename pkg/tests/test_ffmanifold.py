import pytest
from gmpy2 import mpq
from hypothesis import given, settings, strategies as st

from flatf.ffmanifold import (
    EulerFieldError,
    NotSemisimpleError,
    VectorPotential,
    check_inverse_map,
    darboux_checks,
    euler_data,
    semisimple_frame,
    structure_constants,
    validate_vector_potential,
)
from flatf.genus0 import trivial_potential
from flatf.pseries import TruncatedSeries

from conftest import two_spin, two_spin_euler


def agree(a, b):
    return (a - b).is_zero()


def shifted(i, D, base=(0, 1)):
    return TruncatedSeries.variable(i, 2, D, base_point=base)


@pytest.fixture(scope="module")
def frame12(spin12):
    F, E = spin12
    return semisimple_frame(F, E)


def test_two_spin_is_valid(spin12):
    assert validate_vector_potential(spin12[0]).valid


def test_canonical_coordinates(frame12):
    D = frame12.u[0].max_degree
    x1, x2 = shifted(0, D), shifted(1, D)
    t1, t2 = x1, 1 + x2
    assert agree(frame12.u[0], t1)
    assert agree(frame12.u[1], t1 - t2 * t2 / 2)
    assert check_inverse_map(frame12.coords)


def test_frame_matrices(frame12):
    P = frame12.psi_tilde
    D = P[1][1].max_degree
    t2 = 1 + shifted(1, D)
    assert [[agree(P[i][j], v) for j, v in enumerate(row)] for i, row in enumerate([[1, 0], [1, -t2]])] == [
        [True, True],
        [True, True],
    ]
    assert agree(frame12.H[0], 1)
    assert agree(frame12.H[1], t2.invert())


def test_rotation_coefficient(frame12):
    g = frame12.gamma[1][0]
    t2 = 1 + shifted(1, g.max_degree)
    assert agree(g, -(t2 * t2 * t2).invert())
    assert agree(frame12.gamma[0][1], 0)
    assert g.max_degree >= 8


def test_values_at_base(frame12):
    assert frame12.psi_at_base() == ((1, 0), (1, -1))
    assert frame12.delta == (0, mpq(-1, 2))


def test_darboux_identities(frame12):
    assert darboux_checks(frame12).ok


def test_perturbed_rotation_coefficients_detected(frame12):
    gam = [list(r) for r in frame12.gamma]
    gam[1][0] = gam[1][0] + shifted(1, gam[1][0].max_degree)
    assert not darboux_checks(frame12, gamma=gam).ok


def test_literal_cubic_frame_fixture():
    # frozen values for the variant with cubic coefficient -1/12
    F = two_spin(8, mpq(-1, 12))
    fr = semisimple_frame(F, two_spin_euler(F))
    x1, x2 = shifted(0, 8), shifted(1, 8)
    assert agree(fr.u[1], mpq(-1, 4) - x2 / 2 + x1 - x2 * x2 / 4)
    assert fr.psi_at_base() == ((1, 0), (1, mpq(-1, 2)))
    assert fr.delta == (0, mpq(-1, 2))
    assert agree(fr.psi_tilde[1][1], mpq(-1, 2) - x2 / 2)
    g = fr.gamma[1][0]
    expected = sum((c * x2**k for k, c in enumerate([-2, 6, -12, 20, -30, 42])), x2.zero_like())
    assert (g - expected).truncate(5).is_zero()
    c = structure_constants(fr.potential)
    assert agree(c[1][1][1], -(1 + x2) / 2)


def test_non_unital_potential_rejected():
    F = VectorPotential.from_polynomials([{(1, 1): 1}, {(2, 0): 1}], (1, 0), 4)
    rep = validate_vector_potential(F)
    assert not rep.valid
    assert rep.unit_residual != 0
    assert rep.first_violation


def test_non_associative_potential_rejected():
    # c^1_{22} = t^2 and c^2_{22} = t^1 break associativity away from the origin
    F = VectorPotential.from_polynomials(
        [{(2, 0): mpq(1, 2), (0, 3): mpq(1, 6)}, {(1, 1): 1, (1, 2): mpq(1, 2)}], (1, 0), 5
    )
    assert validate_vector_potential(F).associativity_residual != 0


def test_wrong_euler_charges_rejected(spin12):
    with pytest.raises(EulerFieldError):
        euler_data(spin12[0], (0, 0), (0, 0))


def test_nilpotent_point_not_semisimple():
    F = VectorPotential.from_polynomials([{(2, 0): mpq(1, 2)}, {(1, 1): 1}], (1, 0), 5)
    with pytest.raises(NotSemisimpleError):
        semisimple_frame(F)


def test_trivial_manifold_frame():
    fr = semisimple_frame(trivial_potential(3, 5))
    assert darboux_checks(fr).ok
    assert all(agree(fr.gamma[i][j], 0) for i in range(3) for j in range(3))


@settings(max_examples=15, deadline=None)
@given(st.fractions(min_value=-3, max_value=3, max_denominator=4).filter(lambda c: c != 0))
def test_spin_family_frames_satisfy_identities(c):
    F = two_spin(7, mpq(c.numerator, c.denominator))
    assert validate_vector_potential(F).valid
    fr = semisimple_frame(F)
    assert darboux_checks(fr).ok
