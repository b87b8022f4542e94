"""Compare the formal-shift expansion with correlators computed from the frame
at base + tau, through second order in tau (g <= 2, n <= 3).  Takes about a
minute."""

import time

from gmpy2 import mpq

from flatf.fcohft import CorrelatorEngine, FormalShift, compare_tables, correlator_table, formal_shift_table, pipeline
from flatf.ffmanifold import VectorPotential, euler_data


def main():
    F = VectorPotential.from_polynomials(
        [{(2, 0): mpq(1, 2)}, {(1, 1): 1, (0, 3): mpq(-1, 6)}], (1, 0), 16, base_point=(0, 1)
    )
    P = pipeline(F, euler_data(F, (0, mpq(1, 2)), (0, 0)), 9)
    G0 = (2, 3)
    t0 = time.perf_counter()
    A = formal_shift_table(FormalShift(CorrelatorEngine(P.at_base(G0)), F), [0, 1, 2], 3, 2)
    t1 = time.perf_counter()
    B = correlator_table(CorrelatorEngine(P.at_formal_point(G0, 2)), [0, 1, 2], 3)
    t2 = time.perf_counter()
    bad = compare_tables(A, B, 2)
    print(f"entries={len(B.entries)} differing={len(bad)} shift={t1 - t0:.1f}s frame={t2 - t1:.1f}s")
    for key in bad[:10]:
        print(key, A.entries[key].format(), "|", B.entries[key].format())


if __name__ == "__main__":
    main()
