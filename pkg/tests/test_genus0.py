import pytest
from gmpy2 import mpq

from flatf.genus0 import (
    DescendantFamily,
    act_gl,
    act_R,
    act_S,
    ancestor_calibration,
    ancestor_family,
    calibrated,
    calibration_residual,
    cone_residuals,
    descendant_potentials,
    families_equal,
    infinitesimal_R_check,
    is_ancestor,
    j_from_calibration,
    j_function,
    lower_tr_residual,
    omega_pq,
    perturb,
    reconstruct_R,
    reconstruction_check,
    shifted_ancestor_check,
    tangency_matrix,
    to_ancestor,
    trivial_family,
    trivial_potential,
)
from flatf.pseries import MatrixZSeries, mat_identity

from conftest import two_spin, two_spin_euler

S_DATA = [[[1, 2], [0, 3]], [[0, 1], [1, 0]]]


@pytest.fixture(scope="module")
def spin8():
    return two_spin(8)


@pytest.fixture(scope="module")
def spin_family(spin8):
    return ancestor_family(spin8, 2, 5, 3)


def test_trivial_calibration_identities():
    cal = ancestor_calibration(trivial_potential(2, 7), 6)
    assert calibration_residual(cal) == 0
    assert omega_pq(cal).mismatch == 0
    assert lower_tr_residual(cal) == 0


def test_trivial_family_matches_closed_form():
    fam = ancestor_family(trivial_potential(2, 7), 2, 5, 3)
    ok, bad = families_equal(fam, trivial_family(2, 2, 5, 3))
    assert ok and bad == []
    assert cone_residuals(fam).ok
    assert fam.coefficient(0, 0, [(0, 0), (0, 0), (0, 1)]) == mpq(1, 2)
    assert fam.coefficient(0, 0, [(0, 0)] * 3) == 0


def test_spin_family_on_the_cone(spin_family):
    rep = cone_residuals(spin_family)
    assert rep.ok and rep.ancestor and rep.degree_bound
    assert tangency_matrix(spin_family) == ((1, 0), (0, 1))


def test_perturbation_leaves_the_cone(spin_family):
    bad = perturb(spin_family, 0, 0, [(0, 0), (1, 0), (1, 1)], 1)
    rep = cone_residuals(bad)
    assert not rep.ok
    assert rep.string != 0 and rep.trr != 0


def test_j_function_two_ways(spin8, spin_family):
    cal = ancestor_calibration(spin8.centered(), 6)
    for x, y in zip(j_function(spin_family), j_from_calibration(cal, 3)):
        assert all((a - b).truncate(4).is_zero() for a, b in zip(x, y))


def test_gl_action_preserves_the_cone(spin_family):
    assert cone_residuals(act_gl([[1, 0], [1, -1]], spin_family)).ok


def test_s_action_preserves_the_cone_and_shifts(spin_family):
    moved = act_S(S_DATA, spin_family)
    rep = cone_residuals(moved)
    assert rep.ok
    assert not rep.ancestor
    assert moved.origin == (-1, 0)


def test_one_dimensional_s_action():
    tr = trivial_family(1, 3, 5, 4)
    moved = act_S([[[1]]], tr)
    assert cone_residuals(moved).ok
    assert moved.origin == (-1,)
    # frozen from the first run
    assert moved.coefficient(0, 0, [(0, 0)]) == -1
    assert moved.coefficient(0, 0, [(0, 1)]) == 1
    assert moved.coefficient(0, 0, [(0, 4)] * 2) == mpq(1, 2)


def test_s_action_equals_recalibration():
    F = two_spin(8).centered()
    cal = ancestor_calibration(F, 6)
    G = MatrixZSeries(
        [mat_identity(2)] + [[[(-1) ** (i + 1) * x for x in r] for r in m] for i, m in enumerate(S_DATA)], 6
    )
    cal2 = calibrated(F, cal, G)
    assert cal2.shift == (-1, 0)
    assert calibration_residual(cal2) == 0
    fam2 = descendant_potentials(F, cal2, 2, 5, 3)
    assert cone_residuals(fam2).ok
    ok, _ = families_equal(act_S(S_DATA, descendant_potentials(F, cal, 2, 5, 3)), fam2, P=5)
    assert ok


def test_return_to_ancestor_form():
    F = two_spin(8).centered()
    cal = ancestor_calibration(F, 7)
    G = MatrixZSeries([mat_identity(2), [[1, 2], [0, 3]], [[0, 1], [1, 0]]], 7)
    res, step, _ = to_ancestor(F, calibrated(F, cal, G), 2, 5, 3)
    assert step.origin == (0, 0) and res.origin == (0, 0)
    assert is_ancestor(res)
    assert families_equal(res, descendant_potentials(F, cal, 2, 5, 3))[0]


def test_reconstruction_from_constant_part():
    F = two_spin(12)
    rec = reconstruct_R(F, two_spin_euler(F), A_max=2, P=4, B=3, K=3)
    assert rec.ok
    assert rec.psi0 == ((1, 0), (1, -1))
    assert [c[1][0] for c in rec.R0.coeffs] == [0, -1, 3, -15]


def test_reconstruction_detects_wrong_r():
    F = two_spin(12)
    rec = reconstruct_R(F, two_spin_euler(F), A_max=2, P=4, B=3, K=3, verify=False)
    c = [list(map(list, m)) for m in rec.R0.coeffs]
    c[2][1][0] += 1
    bad, _, _ = reconstruction_check(F, rec.psi0, MatrixZSeries(c, 3), A_max=2, P=4, B=3)
    assert bad


def test_r_action_on_trivial_family_stays_on_cone():
    R = MatrixZSeries([mat_identity(2), [[0, 0], [-1, 0]], [[0, 0], [4, 0]], [[0, 0], [-15, 0]]], 3)
    moved = act_R(R, trivial_family(2, 2, 5, 3), weight=3)
    assert cone_residuals(moved).ok


def test_infinitesimal_r_action(spin8):
    fam = ancestor_family(spin8, 3, 6, 3)
    assert infinitesimal_R_check(fam, [[[1, 2], [3, 4]], [[0, 1], [-1, 2]]], weight=4) == []


def test_shifted_ancestor_potentials(spin8):
    assert shifted_ancestor_check(spin8, 2, 5, 3) == []


def test_family_export_round_trip(spin_family):
    again = DescendantFamily.load(spin_family.export())
    assert families_equal(again, spin_family)[0]
    assert again.export() == spin_family.export()
