import pytest
from gmpy2 import mpq

from flatf.ffmanifold import VectorPotential, euler_data


def two_spin(D=12, cubic=mpq(-1, 6), base=(0, 1)):
    return VectorPotential.from_polynomials(
        [{(2, 0): mpq(1, 2)}, {(1, 1): 1, (0, 3): cubic}], (1, 0), D, base_point=base
    )


def two_spin_euler(F):
    return euler_data(F, (0, mpq(1, 2)), (0, 0))


@pytest.fixture(scope="session")
def spin12():
    F = two_spin(12)
    return F, two_spin_euler(F)
