"""End-to-end acceptance checks, each timed against its budget.

Run with ``pytest -s tests/test_acceptance.py`` (or scripts/run_acceptance.py)
to see one PASS/FAIL line per criterion.
"""

import time
from itertools import combinations_with_replacement

import pytest
from gmpy2 import mpq

from flatf.fcohft import (
    CorrelatorEngine,
    FormalShift,
    HomogeneityPreconditionError,
    compare_tables,
    conformal_dimension,
    correlator_table,
    degree_zero_part,
    formal_shift_table,
    genus0_consistency,
    homogeneity_residuals,
    pipeline,
)
from flatf.ffmanifold import check_inverse_map, darboux_checks, semisimple_frame, validate_vector_potential
from flatf.genus0 import (
    act_S,
    ancestor_family,
    cone_residuals,
    families_equal,
    reconstruct_R,
    trivial_family,
    trivial_potential,
)
from flatf.psikappa import psi_integral, vertex_integral, vertex_integral_kappa
from flatf.pseries import TruncatedSeries
from flatf.rmatrix import rmatrix_homogeneous, rmatrix_verify

from conftest import two_spin, two_spin_euler


def report(capsys, number, title, ok, elapsed, budget, detail=""):
    passed = ok and elapsed < budget
    line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}  {title}  {elapsed:.2f}s (limit {budget}s)"
    if detail:
        line += f"  {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, detail
    assert elapsed < budget, f"took {elapsed:.1f}s"


def odd_double_factorial(m):
    out = 1
    for k in range(1, 2 * m, 2):
        out *= k
    return out


def agree(a, b):
    return (a - b).is_zero()


def test_frame_reproduction(capsys):
    t0 = time.perf_counter()
    F = two_spin(12)
    E = two_spin_euler(F)
    fr = semisimple_frame(F, E)
    D = fr.u[0].max_degree
    x1 = TruncatedSeries.variable(0, 2, D, base_point=(0, 1))
    t2 = 1 + TruncatedSeries.variable(1, 2, D, base_point=(0, 1))
    checks = {
        "u1": agree(fr.u[0], x1),
        "u2": agree(fr.u[1], x1 - t2 * t2 / 2),
        "psi_tilde": all(
            agree(fr.psi_tilde[i][j], v) for i, row in enumerate([[1, 0], [1, -t2]]) for j, v in enumerate(row)
        ),
        "H": agree(fr.H[0], 1) and agree(fr.H[1], t2.invert()),
        "gamma": agree(fr.gamma[1][0], -(t2**3).invert()) and agree(fr.gamma[0][1], 0),
        "psi_base": fr.psi_at_base() == ((1, 0), (1, -1)),
        "delta": fr.delta == (0, mpq(-1, 2)),
        "inverse_map": check_inverse_map(fr.coords),
        "darboux": darboux_checks(fr).ok,
    }
    # the literal cubic coefficient -1/12 gives a valid manifold with the
    # same delta and H, but a rescaled second canonical coordinate
    G = two_spin(12, mpq(-1, 12))
    lit = semisimple_frame(G, two_spin_euler(G))
    checks["literal_valid"] = validate_vector_potential(G).valid and lit.delta == fr.delta
    checks["literal_H"] = agree(lit.H[1], t2.invert())
    elapsed = time.perf_counter() - t0
    failed = [k for k, v in checks.items() if not v]
    detail = f"literal -1/12 frame: Psi(base)={lit.psi_at_base()}" + (f" failed={failed}" if failed else "")
    report(capsys, 1, "2-spin frame", not failed, elapsed, 1.0, detail)


def test_homogeneous_rmatrix(capsys):
    t0 = time.perf_counter()
    F = two_spin(12)
    fr = semisimple_frame(F, two_spin_euler(F))
    R = rmatrix_homogeneous(fr, 5)
    base = R.at_base().coeffs
    expected = [((0, 0), ((-1) ** m * odd_double_factorial(m), 0)) for m in range(1, 6)]
    rep = rmatrix_verify(R, fr)
    elapsed = time.perf_counter() - t0
    ok = list(base[1:]) == expected and rep.ok
    report(capsys, 2, "homogeneous R-matrix", ok, elapsed, 1.0, f"(R_m)21 = {[b[1][0] for b in base[1:]]}")


def test_cone_closure(capsys):
    t0 = time.perf_counter()
    fams = {
        "trivial": ancestor_family(trivial_potential(2, 7), 2, 5, 3),
        "two-spin": ancestor_family(two_spin(8), 2, 5, 3),
    }
    fams["trivial-shifted"] = act_S([[[1, 0], [0, 2]]], trivial_family(2, 2, 6, 4)).truncated(P=5, B=3)
    fams["two-spin-shifted"] = act_S([[[1, 2], [0, 3]], [[0, 1], [1, 0]]], fams["two-spin"])
    reports = {k: cone_residuals(v) for k, v in fams.items()}
    elapsed = time.perf_counter() - t0
    ok = all(r.ok for r in reports.values())
    report(capsys, 3, "descendant families on the cone", ok, elapsed, 30.0, " ".join(f"{k}={r.ok}" for k, r in reports.items()))


def test_reconstruction(capsys):
    t0 = time.perf_counter()
    F = two_spin(12)
    rec = reconstruct_R(F, two_spin_euler(F), A_max=2, P=4, B=3, K=3)
    ok_target = families_equal(rec.rebuilt, rec.target, P=4)[0]
    elapsed = time.perf_counter() - t0
    report(capsys, 4, "reconstruction from constant part", rec.ok and ok_target, elapsed, 60.0, f"differing={len(rec.residual)}")


def _psi_keys(max_dim):
    for g in range(max_dim // 3 + 2):
        for n in range(0, max_dim + 4):
            dim = 3 * g - 3 + n
            if 2 * g - 2 + n <= 0 or dim > max_dim or dim < 0:
                continue
            for a in combinations_with_replacement(range(dim + 1), n):
                if sum(a) == dim:
                    yield g, a


def _vertex_keys(max_total):
    for g in range(max_total // 3 + 2):
        for n in range(0, max_total + 4):
            if 2 * g - 2 + n <= 0:
                continue
            for m in range(0, max_total + 1):
                total = 3 * g - 3 + n + m
                if total > max_total:
                    continue
                for b in combinations_with_replacement(range(2, total + 1), m):
                    rest = 3 * g - 3 + n - sum(x - 1 for x in b)
                    if rest < 0:
                        continue
                    for a in combinations_with_replacement(range(rest + 1), n):
                        if sum(a) == rest:
                            yield g, a, b


def test_intersection_numbers(capsys):
    t0 = time.perf_counter()
    string_bad, dilaton_bad, nkeys = [], [], 0
    for g, a in _psi_keys(7):
        nkeys += 1
        if 2 * g - 2 + len(a) - 1 > 0 and 0 in a:
            i = a.index(0)
            rest = a[:i] + a[i + 1 :]
            rhs = sum(psi_integral(g, rest[:j] + (x - 1,) + rest[j + 1 :]) for j, x in enumerate(rest) if x)
            if psi_integral(g, a) != rhs:
                string_bad.append((g, a))
        if 2 * g - 2 + len(a) - 1 > 0 and 1 in a:
            i = a.index(1)
            rest = a[:i] + a[i + 1 :]
            if psi_integral(g, a) != (2 * g - 2 + len(rest)) * psi_integral(g, rest):
                dilaton_bad.append((g, a))
    spots = (
        psi_integral(0, (0, 0, 0)) == 1
        and psi_integral(1, (1,)) == mpq(1, 24)
        and psi_integral(2, (4,)) == mpq(1, 1152)
    )
    vkeys = list(_vertex_keys(8))
    route_bad = [k for k in vkeys if vertex_integral(*k) != vertex_integral_kappa(*k)]
    elapsed = time.perf_counter() - t0
    ok = spots and not string_bad and not dilaton_bad and not route_bad
    detail = f"psi keys={nkeys} vertex keys={len(vkeys)} bad={len(string_bad) + len(dilaton_bad) + len(route_bad)}"
    report(capsys, 5, "intersection numbers", ok, elapsed, 60.0, detail)


def test_genus_zero_consistency(capsys):
    t0 = time.perf_counter()
    F = two_spin(12)
    P = pipeline(F, two_spin_euler(F), 4)
    bad = genus0_consistency(F, CorrelatorEngine(P.at_base((5, 7))), 4, 2)
    elapsed = time.perf_counter() - t0
    report(capsys, 6, "genus-0 correlators vs ancestor potentials", not bad, elapsed, 120.0, f"mismatches={len(bad)}")


def test_homogeneity(capsys):
    t0 = time.perf_counter()
    F = two_spin(16)
    E = two_spin_euler(F)
    P = pipeline(F, E, 7)
    delta = P.frame.delta
    lam = 5
    results = {}
    # tables one tau-order deeper: E(tau) has a constant part, so the residual
    # at order 2 involves coefficients of order 3
    for G0, gamma in [((lam, 0), 0), ((0, lam), 1)]:
        T = correlator_table(CorrelatorEngine(P.at_formal_point(G0, 3)), [0, 1, 2], 3)
        results[G0] = (
            conformal_dimension(delta, G0) == gamma,
            len(homogeneity_residuals(T, E, gamma, 2)),
            len(homogeneity_residuals(T, E, 1 - gamma, 2)),
            len(T.entries),
        )
    try:
        conformal_dimension(delta, (lam, lam))
        mixed_rejected = False
    except HomogeneityPreconditionError:
        mixed_rejected = True
    psi0 = P.frame.psi_at_base()
    dz = degree_zero_part(psi0, (0, lam)) == (0, -lam) and degree_zero_part(psi0, (0, -1)) == (0, 1)
    elapsed = time.perf_counter() - t0
    ok = dz and mixed_rejected and all(c and bad == 0 and other > 0 for c, bad, other, _ in results.values())
    detail = " ".join(f"G0={k}: failing={v[1]}/{v[3]} (wrong charge {v[2]})" for k, v in results.items())
    report(capsys, 7, "homogeneity and conformal dimension", ok, elapsed, 600.0, detail)


def test_two_route_identity(capsys):
    t0 = time.perf_counter()
    F = two_spin(14)
    P = pipeline(F, two_spin_euler(F), 5)
    G0 = (2, 3)
    A = formal_shift_table(FormalShift(CorrelatorEngine(P.at_base(G0)), F), [0, 1], 2, 1)
    B = correlator_table(CorrelatorEngine(P.at_formal_point(G0, 1)), [0, 1], 2)
    bad = compare_tables(A, B, 1)
    nontrivial = sum(1 for v in B.entries.values() if not v.truncate(1).is_zero())
    elapsed = time.perf_counter() - t0
    ok = not bad and len(A.entries) == len(B.entries) and nontrivial > 0
    report(capsys, 8, "formal shift vs frame at tau", ok, elapsed, 300.0, f"entries={len(B.entries)} differing={len(bad)}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-q"]))
