"""Print correlator tables of the 2-spin theory at the base point.

    python scripts/two_spin_tables.py --G0 3,0 --genus 0,1,2 --n-max 2
"""

import argparse

from gmpy2 import mpq

from flatf.fcohft import CorrelatorEngine, correlator_table, pipeline
from flatf.ffmanifold import VectorPotential, euler_data
from flatf.pseries import rational


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--G0", default="3,0")
    ap.add_argument("--genus", default="0,1,2")
    ap.add_argument("--n-max", type=int, default=2)
    ap.add_argument("--max-level", type=int, default=None)
    args = ap.parse_args()
    genera = [int(x) for x in args.genus.split(",")]
    G0 = tuple(rational(x) for x in args.G0.split(","))
    K = max(3 * g - 2 + args.n_max for g in genera)
    F = VectorPotential.from_polynomials(
        [{(2, 0): mpq(1, 2)}, {(1, 1): 1, (0, 3): mpq(-1, 6)}], (1, 0), K + 8, base_point=(0, 1)
    )
    P = pipeline(F, euler_data(F, (0, mpq(1, 2)), (0, 0)), max(K, 1))
    table = correlator_table(CorrelatorEngine(P.at_base(G0)), genera, args.n_max, args.max_level)
    print(table.format(), end="")


if __name__ == "__main__":
    main()
