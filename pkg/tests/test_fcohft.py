from fractions import Fraction
from itertools import product

import pytest
from gmpy2 import mpq
from hypothesis import given, settings, strategies as st

from flatf.fcohft import (
    CorrelatorEngine,
    CorrelatorTable,
    FTFTSpec,
    FormalShift,
    HomogeneityPreconditionError,
    compare_tables,
    conformal_dimension,
    correlator_table,
    degree_zero_part,
    edge_series,
    enumerate_trees,
    formal_shift_table,
    ftft_value,
    genus0_consistency,
    givental_correlator,
    pipeline,
    tree_sum,
    unit_defects,
)
from flatf.genus0 import TruncationError, trivial_potential
from flatf.psikappa import UnstableError, psi_integral

from conftest import two_spin, two_spin_euler


@pytest.fixture(scope="module")
def spin():
    F = two_spin(14)
    E = two_spin_euler(F)
    return F, E, pipeline(F, E, 6)


@pytest.mark.parametrize(
    "g,n1,count",
    [(0, 3, 1), (1, 1, 1), (1, 2, 2), (0, 4, 4), (0, 5, 26), (1, 3, 8), (2, 1, 3)],
)
def test_tree_counts(g, n1, count):
    trees = enumerate_trees(g, n1)
    assert len(trees) == count
    assert all(t.is_stable() and t.genus == g for t in trees)
    assert all(t.legs[0] == 0 for t in trees)


def test_genus_two_automorphisms():
    trees = enumerate_trees(2, 1)
    assert sum(Fraction(1, t.automorphisms) for t in trees) == Fraction(5, 2)


def test_unstable_tree_request():
    with pytest.raises(UnstableError):
        enumerate_trees(0, 2)


def test_ftft_values():
    spec = FTFTSpec((mpq(2), mpq(1)), (mpq(3), mpq(5)))
    assert ftft_value(spec, 0, (0, 0, 0)) == mpq(1, 2)
    assert ftft_value(spec, 1, (0,)) == 3
    assert ftft_value(spec, 2, (1, 1, 1)) == 25
    assert ftft_value(spec, 1, (0, 1)) == 0
    assert FTFTSpec.trivial((7,)).w == (1,)


@pytest.fixture(scope="module")
def trivial3():
    return CorrelatorEngine(pipeline(trivial_potential(3, 9), None, 7).at_base((2, 3, 5)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2), st.integers(0, 3), st.data())
def test_trivial_theory_is_weighted_psi_integrals(trivial3, g, n, data):
    if 2 * g - 1 + n <= 0:
        return
    dim = 3 * g - 2 + n
    colors = data.draw(st.lists(st.integers(0, 2), min_size=n + 1, max_size=n + 1))
    exps = [0] * (n + 1)
    for _ in range(dim):
        exps[data.draw(st.integers(0, n))] += 1
    val = trivial3.correlator(g, (colors[0], exps[0]), list(zip(colors[1:], exps[1:])))
    if len(set(colors)) > 1:
        assert val == 0
    else:
        assert val == (2, 3, 5)[colors[0]] ** g * psi_integral(g, exps)


def test_one_dimensional_trivial_values():
    e = CorrelatorEngine(pipeline(trivial_potential(1, 8), None, 4).at_base((7,)))
    assert e.correlator(1, (0, 1), []) == mpq(7, 24)
    assert e.correlator(2, (0, 4), []) == mpq(49, 1152)
    assert e.correlator(0, (0, 0), [(0, 0)] * 2) == 1


def test_idempotent_datum_values(spin):
    # G0 = (lambda, 0): only the first idempotent direction carries genus
    F, E, P = spin
    e = CorrelatorEngine(P.at_base((3, 0)))
    assert e.correlator(1, (0, 1), []) == mpq(1, 8)
    assert e.correlator(2, (0, 4), []) == mpq(1, 128)
    assert e.correlator(1, (0, 1), [(0, 1)]) == 3 * psi_integral(1, (1, 1))
    assert e.correlator(1, (0, 2), [(0, 0)]) == 3 * psi_integral(1, (0, 2))
    assert e.correlator(2, (0, 3), [(0, 2)]) == 9 * psi_integral(2, (2, 3))
    assert e.correlator(1, (0, 1), [(1, 1)]) == 0


def test_dimension_bound(spin):
    e = CorrelatorEngine(spin[2].at_base((2, 3)))
    assert e.correlator(1, (0, 2), []) == 0
    assert e.correlator(0, (1, 0), [(0, 1), (1, 1)]) == 0


def test_truncation_guard(spin):
    e = CorrelatorEngine(spin[2].at_base((2, 3), K=2))
    with pytest.raises(TruncationError):
        e.correlator(2, (0, 0), [(0, 0)])


def test_tree_route_equals_engine(spin):
    e = CorrelatorEngine(spin[2].at_base((2, 3)))
    keys = [(0, 2), (0, 3), (1, 0), (1, 1), (2, 0)]
    for g, n in keys:
        T = correlator_table(e, [g], n)
        for (gg, root, ins), v in T.entries.items():
            if len(ins) == n:
                assert tree_sum(e, gg, root, ins) == v


def test_genus_zero_matches_ancestor_potentials(spin):
    F, _, P = spin
    e = CorrelatorEngine(P.at_base((5, 7)))
    assert genus0_consistency(F, e, 4, 2) == []


def test_genus_zero_independent_of_genus_one_datum(spin):
    P = spin[2]
    a = correlator_table(CorrelatorEngine(P.at_base((2, 3))), [0], 4)
    b = correlator_table(CorrelatorEngine(P.at_base((-1, 9))), [0], 4)
    assert compare_tables(a, b) == []


def test_unit_axiom(spin):
    e = CorrelatorEngine(spin[2].at_base((2, 3)))
    assert unit_defects(e, (1, 0), [0, 1], 2) == []
    assert unit_defects(e, (1, 0), [2], 1) == []


def test_edge_term_reproduces_numerator(spin):
    R = spin[2].at_base((1, 1)).R
    zero, one = mpq(0), mpq(1)
    ET = edge_series(R, zero, one, 3)
    # (x + y) ET(x, y) at x = 1, y = 0 recovers Id - R(-1) through z-order 4
    lhs = [[zero] * 2 for _ in range(2)]
    for (p, q), m in ET.items():
        if q == 0:
            for i, j in product(range(2), repeat=2):
                lhs[i][j] += m[i][j]
    rhs = [[(1 if i == j else 0) - sum((-1) ** k * R[k][i][j] for k in range(5)) for j in range(2)] for i in range(2)]
    assert lhs == rhs


def test_gauge_changes_only_higher_genus():
    F = two_spin(14)
    E = two_spin_euler(F)
    free = pipeline(F, None, 6, diag_constants=[(1, 2), (0, 3), (5, 0), (0, 0), (1, 1), (0, 0)])
    a = correlator_table(CorrelatorEngine(pipeline(F, E, 6).at_base((2, 3))), [0, 1, 2], 2)
    b = correlator_table(CorrelatorEngine(free.at_base((2, 3))), [0, 1, 2], 2)
    diff = compare_tables(a, b)
    assert diff
    assert {k[0] for k in diff} == {2}


def test_single_correlator_shortcut():
    F = two_spin(12)
    val = givental_correlator(F, (3, 0), 1, (0, 1), [], euler=two_spin_euler(F))
    assert val == mpq(1, 8)


def test_two_routes_to_shifted_theory_first_order(spin):
    F, _, P = spin
    base = CorrelatorEngine(P.at_base((2, 3)))
    A = formal_shift_table(FormalShift(base, F), [0, 1], 2, 1)
    B = correlator_table(CorrelatorEngine(P.at_formal_point((2, 3), 1)), [0, 1], 2)
    assert len(A.entries) == len(B.entries) > 0
    assert compare_tables(A, B, 1) == []


def test_homogeneity_charge_depends_on_eigenspace(spin):
    from flatf.fcohft import homogeneity_residuals

    F, E, P = spin
    for G0, good, bad in [((5, 0), 0, 1), ((0, 5), 1, 0)]:
        T = correlator_table(CorrelatorEngine(P.at_formal_point(G0, 2)), [0, 1, 2], 2)
        assert homogeneity_residuals(T, E, good, 1) == []
        assert homogeneity_residuals(T, E, bad, 1)


def test_conformal_dimension(spin):
    delta = spin[2].frame.delta
    assert conformal_dimension(delta, (5, 0)) == 0
    assert conformal_dimension(delta, (0, 5)) == 1
    with pytest.raises(HomogeneityPreconditionError):
        conformal_dimension(delta, (5, 5))


def test_degree_zero_part(spin):
    psi0 = spin[2].frame.psi_at_base()
    assert degree_zero_part(psi0, (0, 5)) == (0, -5)
    assert degree_zero_part(psi0, (0, -1)) == (0, 1)
    assert degree_zero_part(psi0, (4, 0)) == (4, 4)


def test_table_round_trip(spin):
    e = CorrelatorEngine(spin[2].at_formal_point((2, 3), 1))
    T = correlator_table(e, [0, 1], 1)
    again = CorrelatorTable.load(T.export())
    assert again.export() == T.export()
    assert compare_tables(again, T) == []
    assert T.format().count("\n") == len(T.entries)
