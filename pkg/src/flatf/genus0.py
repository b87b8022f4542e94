"""Genus-zero descendant theory of a calibrated flat F-manifold.

A descendant family is stored as series in the variables ``t^beta_b``
(``0 <= b <= B``), all expanded around zero except ``t_0``, which is expanded
around ``family.origin``.  Truncation is by total degree ``P`` (the number of
insertions), or, for outputs of :func:`act_R`, by the weight that counts
only ``t_0`` and ``t_1``.  Infinite sums in the group actions are cut using
the degree bound satisfied by ancestor families; each cut is justified in the
function that makes it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from math import factorial
from typing import Sequence

from gmpy2 import mpq

from .ffmanifold import VectorPotential, _norm, d, structure_constants
from .pseries import (
    MatrixZSeries,
    TruncatedSeries,
    frac_str,
    integrate_closed_form,
    mat_identity,
    mat_inverse,
    mat_mul,
    mat_zero,
    rational,
    unpack,
)


class TruncationError(ValueError):
    pass


class NotAncestorError(ValueError):
    pass


def _sign(k: int) -> int:
    return -1 if k % 2 else 1


# variable layout -----------------------------------------------------------------


def var(N: int, beta: int, b: int) -> int:
    return b * N + beta


def _weights(N: int, B: int):
    return tuple(1 if b <= 1 else 0 for b in range(B + 1) for _ in range(N))


def _zero(N, B, P, weighted=False):
    return TruncatedSeries.zero(N * (B + 1), P, weights=_weights(N, B) if weighted else None)


def _mat_series(m, like):
    return tuple(tuple(x if isinstance(x, TruncatedSeries) else like.constant_like(x) for x in row) for row in m)


# calibrations --------------------------------------------------------------------


@dataclass
class Calibration:
    """``omega[d + 1]`` is the matrix Omega^d_0 (entries series in the flat
    variables of ``potential``), for d = -1 .. K-1."""

    potential: VectorPotential
    omega: list
    shift: tuple

    @property
    def K(self) -> int:
        return len(self.omega) - 1

    def upper(self, d: int):
        return self.omega[d + 1]

    def as_zseries(self) -> MatrixZSeries:
        """Id + sum_d Omega^{d-1}_0 z^d."""
        return MatrixZSeries(list(self.omega), self.K)


def ancestor_calibration(F: VectorPotential, K: int) -> Calibration:
    """Omega^d_0 for d < K, solved from dOmega^p = Omega^{p-1} dOmega^0 with
    every Omega^p vanishing at the base point."""
    n = F.N
    zero = F.potentials[0].zero_like(F.max_degree - 1)
    first = []
    for a in range(n):
        row = []
        for b in range(n):
            x = d(F.potentials[a], b)
            row.append(x - x.constant_term())
        first.append(tuple(row))
    first = tuple(first)
    grads = [[[d(first[a][b], g) for g in range(n)] for b in range(n)] for a in range(n)]
    ident = tuple(tuple(zero + (1 if i == j else 0) for j in range(n)) for i in range(n))
    omega = [ident, first]
    for _ in range(2, K + 1):
        prev = omega[-1]
        nxt = []
        for a in range(n):
            row = []
            for b in range(n):
                comps = []
                for g in range(n):
                    s = zero.zero_like(zero.max_degree - 1)
                    for m in range(n):
                        s = s + prev[a][m] * grads[m][b][g]
                    comps.append(s)
                row.append(integrate_closed_form(comps, 0).truncate(zero.max_degree))
            nxt.append(tuple(row))
        omega.append(tuple(nxt))
    shift = tuple(
        sum((F.unit[b] * omega[1][a][b] for b in range(n)), zero).constant_term() for a in range(n)
    )
    return Calibration(F, omega[: K + 1], shift)


def calibrated(F: VectorPotential, cal: Calibration, G: MatrixZSeries) -> Calibration:
    """The calibration ``G(z) (Id + sum Omega^{d-1}_0 z^d)`` for constant G(z), G(0) = Id."""
    prod = G * cal.as_zseries()
    zero = cal.omega[0][0][0].zero_like()
    omega = [_mat_series(c, zero) for c in prod.coeffs]
    n = F.N
    shift = tuple(
        sum((F.unit[b] * omega[1][a][b] for b in range(n)), zero).constant_term() for a in range(n)
    )
    return Calibration(F, omega, shift)


def calibration_residual(cal: Calibration):
    n = cal.potential.N
    res = []
    first = cal.upper(0)
    for p in range(1, cal.K):
        cur, prev = cal.upper(p), cal.upper(p - 1)
        for g in range(n):
            for a in range(n):
                for b in range(n):
                    lhs = d(cur[a][b], g)
                    rhs = lhs.zero_like()
                    for m in range(n):
                        rhs = rhs + prev[a][m] * d(first[m][b], g)
                    res.append(lhs - rhs)
    return _norm(res)


def omega_lower(cal: Calibration) -> list:
    """[Omega^0_{-1}, Omega^0_0, ...] from the inverse of the upper series."""
    inv = cal.as_zseries().inverse()
    zero = cal.omega[0][0][0].zero_like()
    out = []
    for k, c in enumerate(inv.coeffs):
        c = _mat_series(c, zero)
        out.append(c if k % 2 == 0 else tuple(tuple(-x for x in row) for row in c))
    return out


@dataclass
class OmegaTable:
    upper: list  # Omega^p_0, index p + 1
    lower: list  # Omega^0_q, index q + 1
    table: dict  # (p, q) -> matrix
    mismatch: object  # norm of the difference of the two defining sums

    def __getitem__(self, pq):
        return self.table[pq]


def omega_pq(cal: Calibration, max_total: int | None = None) -> OmegaTable:
    """Omega^p_q for p + q < K via both defining sums, which must agree."""
    K = cal.K if max_total is None else max_total + 1
    if K > cal.K:
        raise TruncationError(f"calibration known to z-order {cal.K}, need {K}")
    n = cal.potential.N
    up = list(cal.omega)
    low = omega_lower(cal)
    zero = up[0][0][0].zero_like()

    def U(p):
        return up[p + 1]

    def L(q):
        return low[q + 1]

    table = {}
    diffs = []
    for total in range(K):
        for p in range(total + 1):
            q = total - p
            first = _mat_series(mat_zero(n), zero)
            for i in range(q + 1):
                term = mat_mul(U(p + q - i), L(i - 1), zero)
                first = tuple(tuple(x + _sign(q - i) * y for x, y in zip(r1, r2)) for r1, r2 in zip(first, term))
            second = _mat_series(mat_zero(n), zero)
            for i in range(p + 1):
                term = mat_mul(U(i - 1), L(p + q - i), zero)
                second = tuple(tuple(x + _sign(p - i) * y for x, y in zip(r1, r2)) for r1, r2 in zip(second, term))
            table[(p, q)] = first
            diffs.extend(x - y for r1, r2 in zip(first, second) for x, y in zip(r1, r2))
    return OmegaTable(up, low, table, _norm(diffs))


def lower_tr_residual(cal: Calibration):
    """dOmega^0_p = dOmega^0_0 . Omega^0_{p-1}."""
    n = cal.potential.N
    low = omega_lower(cal)
    res = []
    for p in range(1, len(low) - 1):
        for g in range(n):
            for a in range(n):
                for b in range(n):
                    lhs = d(low[p + 1][a][b], g)
                    rhs = lhs.zero_like()
                    for m in range(n):
                        rhs = rhs + d(low[1][a][m], g) * low[p][m][b]
                    res.append(lhs - rhs)
    return _norm(res)


# descendant families ---------------------------------------------------------------


@dataclass
class DescendantFamily:
    N: int
    unit: tuple
    B: int
    P: int
    potentials: dict  # (alpha, a) -> TruncatedSeries
    origin: tuple
    weighted: bool = False
    notes: list = field(default_factory=list)

    @property
    def A_max(self) -> int:
        return max(a for _, a in self.potentials)

    @property
    def nvars(self) -> int:
        return self.N * (self.B + 1)

    def F(self, alpha: int, a: int) -> TruncatedSeries:
        """F^{alpha,a}, with F^{alpha,a} = (-1)^{a+1} q^alpha_{-a-1} for a < 0."""
        if a < 0:
            return self.q(alpha, -a - 1).scale(_sign(a + 1))
        if a > self.A_max:
            raise TruncationError(f"family index {a} beyond A_max={self.A_max}")
        return self.potentials[(alpha, a)]

    def zero(self) -> TruncatedSeries:
        return next(iter(self.potentials.values())).zero_like()

    def t(self, beta: int, b: int) -> TruncatedSeries:
        if b > self.B:
            return self.zero()
        return self.zero().variable_like(var(self.N, beta, b))

    def q(self, beta: int, b: int) -> TruncatedSeries:
        """q^beta_b = t^beta_b - A^beta delta_{b,1}, with t_0 around the origin."""
        x = self.t(beta, b)
        if b == 0:
            return x + self.origin[beta]
        if b == 1:
            return x - self.unit[beta]
        return x

    def truncated(self, P: int | None = None, B: int | None = None, A_max: int | None = None) -> "DescendantFamily":
        """Restrict to total degree P, levels <= B (other t's set to zero) and a <= A_max."""
        B = self.B if B is None else B
        A_max = self.A_max if A_max is None else A_max
        out = {}
        drop = [var(self.N, beta, b) for b in range(B + 1, self.B + 1) for beta in range(self.N)]
        keep = {var(self.N, beta, b): var(self.N, beta, b) for b in range(B + 1) for beta in range(self.N)}
        for (alpha, a), s in self.potentials.items():
            if a > A_max:
                continue
            s = s.restrict_zero(drop)
            if B != self.B:
                mapping = [keep.get(i, 0) for i in range(self.nvars)]
                s = s.reindex(self.N * (B + 1), mapping, weights=_weights(self.N, B) if self.weighted else None)
            if P is not None:
                s = _cap_total_degree(s, P)
            out[(alpha, a)] = s
        newP = self.P if P is None or self.weighted else min(P, self.P)
        return replace(self, B=B, P=newP, potentials=out, notes=list(self.notes))

    def coefficient(self, alpha: int, a: int, insertions) -> object:
        """Coefficient of prod t^{beta}_{b} over the multiset ``insertions`` of (beta, b)."""
        exps = [0] * self.nvars
        for beta, b in insertions:
            exps[var(self.N, beta, b)] += 1
        return self.potentials[(alpha, a)].coefficient(exps)

    def export(self) -> str:
        lines = [
            json.dumps(
                {
                    "N": self.N,
                    "B": self.B,
                    "P": self.P,
                    "unit": [frac_str(x) for x in self.unit],
                    "origin": [frac_str(x) for x in self.origin],
                    "weighted": self.weighted,
                },
                sort_keys=True,
            )
        ]
        for (alpha, a) in sorted(self.potentials):
            s = self.potentials[(alpha, a)]
            for exps, v in s.items():
                mono = []
                for i, e in enumerate(exps):
                    beta, b = i % self.N, i // self.N
                    mono.extend([[beta + 1, b]] * e)
                lines.append(json.dumps({"alpha": alpha + 1, "a": a, "monomial": mono, "value": frac_str(v)}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> "DescendantFamily":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        head = rows[0]
        N, B, P = head["N"], head["B"], head["P"]
        terms = {}
        for r in rows[1:]:
            exps = [0] * (N * (B + 1))
            for beta, b in r["monomial"]:
                exps[var(N, beta - 1, b)] += 1
            terms.setdefault((r["alpha"] - 1, r["a"]), {})[tuple(exps)] = r["value"]
        weights = _weights(N, B) if head["weighted"] else None
        A = max(a for _, a in terms) if terms else 0
        pots = {}
        for alpha in range(N):
            for a in range(A + 1):
                pots[(alpha, a)] = TruncatedSeries(N * (B + 1), terms.get((alpha, a), {}), max_degree=P, weights=weights)
        return cls(N, tuple(rational(x) for x in head["unit"]), B, P, pots, tuple(rational(x) for x in head["origin"]), head["weighted"])


def _cap_total_degree(s: TruncatedSeries, P: int) -> TruncatedSeries:
    if s.weights is None:
        return s.truncate(min(P, s.max_degree))
    return s._like({k: v for k, v in s.packed_items() if sum(unpack(k, s.nvars)) <= P})


def families_equal(x: DescendantFamily, y: DescendantFamily, P: int | None = None) -> tuple[bool, list]:
    """Coefficient-wise comparison on the common truncation; returns the
    differing keys."""
    B = min(x.B, y.B)
    A = min(x.A_max, y.A_max)
    if P is None:
        P = min(x.P, y.P)
    xs = x.truncated(P=P, B=B, A_max=A)
    ys = y.truncated(P=P, B=B, A_max=A)
    bad = []
    for key in sorted(xs.potentials):
        a, b = xs.potentials[key], ys.potentials[key]
        da = {k: v for k, v in a.packed_items() if sum(unpack(k, a.nvars)) <= P}
        db = {k: v for k, v in b.packed_items() if sum(unpack(k, b.nvars)) <= P}
        if da != db:
            bad.append(key)
    return (not bad), bad


@dataclass
class TopologicalSolution:
    v: tuple
    iterations: int
    residual: object


def topological_solution(F: VectorPotential, cal: Calibration, P: int, B: int) -> TopologicalSolution:
    """Fixed point of v = t_0 + sum_{d>=1} Omega^0_{d-1}(v) t_d.

    This is the solution of the principal hierarchy with v = t_0 at
    t_{>=1} = 0; the flow equations are checked as a residual.
    """
    n = F.N
    low = omega_lower(cal)
    if len(low) < B + 1:
        raise TruncationError("calibration z-order too small for the descendant level")
    zero = _zero(n, B, P)
    t = [[zero.variable_like(var(n, a, b)) for b in range(B + 1)] for a in range(n)]
    lin = [t[a][0] for a in range(n)]
    v = tuple(lin)
    for it in range(P + 2):
        cache = {}
        nxt = []
        for a in range(n):
            s = lin[a]
            for dd in range(1, B + 1):
                mat = low[dd]  # Omega^0_{dd-1}
                for beta in range(n):
                    entry = mat[a][beta]
                    if entry.is_zero():
                        continue
                    s = s + entry.compose(v, cache) * t[beta][dd]
            nxt.append(s)
        nxt = tuple(nxt)
        if nxt == v:
            break
        v = nxt
    else:
        raise TruncationError("topological solution did not stabilise")
    # flows: dv/dt^beta_d = d_x Omega^0_{beta,d}(v), d_x = A^g d/dt^g_0
    res = []
    cache = {}
    for dd in range(B + 1):
        mat = low[dd + 1]
        for beta in range(n):
            for a in range(n):
                comp = mat[a][beta].compose(v, cache)
                dx = comp.zero_like()
                for g in range(n):
                    if F.unit[g]:
                        dx = dx + d(comp, var(n, g, 0)).scale(F.unit[g])
                lhs = d(v[a], var(n, beta, dd))
                res.append(lhs - dx)
    return TopologicalSolution(v, it, _norm(res))


def descendant_potentials(
    F: VectorPotential, cal: Calibration, A_max: int, P: int, B: int, *, origin=None
) -> DescendantFamily:
    """F^{alpha,a} = sum_b Omega^{alpha,a}_{beta,b}(v^top) q^beta_b.

    Omega and v are composed as series: correct to degree min(P, D - 1).
    """
    n = F.N
    if F.max_degree - 1 < P:
        raise TruncationError(f"potential known to degree {F.max_degree}; need at least {P + 1}")
    if cal.K < A_max + B + 1:
        raise TruncationError(f"calibration z-order {cal.K} < A_max + B + 1")
    tab = omega_pq(cal, A_max + B)
    top = topological_solution(F, cal, P, B)
    if origin is None:
        origin = tuple(b + c for b, c in zip(F.base_point, cal.shift))
    fam = DescendantFamily(n, tuple(rational(x) for x in F.unit), B, P, {}, tuple(rational(x) for x in origin))
    cache = {}
    qs = [[fam_q(n, B, P, origin, F.unit, beta, b) for b in range(B + 1)] for beta in range(n)]
    for a in range(A_max + 1):
        for alpha in range(n):
            s = _zero(n, B, P)
            for b in range(B + 1):
                mat = tab[(a, b)]
                for beta in range(n):
                    entry = mat[alpha][beta]
                    if entry.is_zero():
                        continue
                    s = s + entry.compose(top.v, cache) * qs[beta][b]
            fam.potentials[(alpha, a)] = s
    fam.notes.append(f"topological solution residual {frac_str(top.residual)}")
    return fam


def fam_q(N, B, P, origin, unit, beta, b):
    x = _zero(N, B, P).variable_like(var(N, beta, b))
    if b == 0:
        return x + rational(origin[beta])
    if b == 1:
        return x - rational(unit[beta])
    return x


def ancestor_family(F: VectorPotential, A_max: int, P: int, B: int) -> DescendantFamily:
    """Ancestor potentials of F around its base point (taken as the origin)."""
    Fc = F.centered()
    cal = ancestor_calibration(Fc, A_max + B + 1)
    fam = descendant_potentials(Fc, cal, A_max, P, B)
    fam.notes.append("ancestor calibration")
    return fam


def trivial_family(N: int, A_max: int, P: int, B: int) -> DescendantFamily:
    """Closed form for the trivial flat F-manifold of dimension N:
    F^{alpha,a} = sum_n sum_{d_1+..+d_n = n-2-a} prod t^alpha_{d_i} / (n(n-1) a! prod d_i!)."""
    pots = {}
    for alpha in range(N):
        for a in range(A_max + 1):
            terms = {}
            for npts in range(a + 2, P + 1):
                total = npts - 2 - a
                for parts in _compositions(total, npts, B):
                    exps = [0] * (N * (B + 1))
                    denom = 1
                    for dd in parts:
                        exps[var(N, alpha, dd)] += 1
                        denom *= factorial(dd)
                    key = tuple(exps)
                    terms[key] = terms.get(key, 0) + mpq(1, npts * (npts - 1) * factorial(a) * denom)
            pots[(alpha, a)] = TruncatedSeries(N * (B + 1), terms, max_degree=P)
    return DescendantFamily(N, (mpq(1),) * N, B, P, pots, (mpq(0),) * N, notes=["trivial closed form"])


def _compositions(total, parts, cap):
    """Ordered tuples of ``parts`` integers in [0, cap] summing to ``total``."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    for first in range(min(total, cap) + 1):
        for rest in _compositions(total - first, parts - 1, cap):
            yield (first,) + rest


def trivial_potential(N: int, max_degree: int) -> VectorPotential:
    polys = []
    for a in range(N):
        e = [0] * N
        e[a] = 2
        polys.append({tuple(e): mpq(1, 2)})
    return VectorPotential.from_polynomials(polys, (1,) * N, max_degree)


def constant_part(F: VectorPotential, max_degree: int | None = None) -> VectorPotential:
    """The constant flat F-manifold with the structure constants of F at its base point."""
    n = F.N
    c = structure_constants(F)
    polys = []
    for a in range(n):
        poly = {}
        for b in range(n):
            for g in range(n):
                e = [0] * n
                e[b] += 1
                e[g] += 1
                val = c[a][b][g].constant_term() * mpq(1, 2)
                if val:
                    poly[tuple(e)] = poly.get(tuple(e), 0) + val
        polys.append(poly)
    return VectorPotential.from_polynomials(polys, F.unit, F.max_degree if max_degree is None else max_degree)


# cone conditions --------------------------------------------------------------------


@dataclass
class ConeReport:
    string: object
    dilaton: object
    trr: object
    relation: object
    trr1: object
    trr2: object
    ancestor: bool
    degree_bound: bool

    @property
    def ok(self) -> bool:
        return all(v == 0 for v in (self.string, self.dilaton, self.trr, self.relation, self.trr1, self.trr2))

    def as_dict(self):
        out = {k: frac_str(getattr(self, k)) for k in ("string", "dilaton", "trr", "relation", "trr1", "trr2")}
        out["ancestor"] = self.ancestor
        out["degree_bound"] = self.degree_bound
        return out


class _Derivs:
    def __init__(self, fam: DescendantFamily):
        self.fam = fam
        self.one = {}
        self.two = {}

    def d1(self, alpha, a, beta, b):
        key = (alpha, a, beta, b)
        if key not in self.one:
            if b > self.fam.B:
                raise TruncationError("descendant level beyond B")
            self.one[key] = d(self.fam.F(alpha, a), var(self.fam.N, beta, b))
        return self.one[key]

    def d2(self, alpha, a, beta, b, gamma, c):
        key = (alpha, a) + tuple(sorted([(beta, b), (gamma, c)]))
        if key not in self.two:
            self.two[key] = d(self.d1(alpha, a, beta, b), var(self.fam.N, gamma, c))
        return self.two[key]


def is_ancestor(fam: DescendantFamily) -> bool:
    if any(x for x in fam.origin):
        return False
    for s in fam.potentials.values():
        for k, _ in s.packed_items():
            if sum(unpack(k, s.nvars)) <= 1:
                return False
    return True


def degree_bound_holds(fam: DescendantFamily) -> bool:
    """Every monomial of F^{alpha,a} has degree <= -a-2, deg t_b = b - 1."""
    n = fam.N
    for (alpha, a), s in fam.potentials.items():
        for exps, _ in s.items():
            deg = sum(e * (i // n - 1) for i, e in enumerate(exps))
            if deg > -a - 2:
                return False
    return True


def cone_residuals(fam: DescendantFamily) -> ConeReport:
    n, B, A = fam.N, fam.B, fam.A_max
    D = _Derivs(fam)
    string, dil, trr, rel, trr1, trr2 = [], [], [], [], [], []
    for alpha in range(n):
        for a in range(A + 1):
            F = fam.F(alpha, a)
            s = fam.F(alpha, a - 1)
            dl = -F
            for b in range(B + 1):
                for beta in range(n):
                    db = D.d1(alpha, a, beta, b)
                    if b + 1 <= B:
                        s = s + fam.q(beta, b + 1) * db
                    dl = dl + fam.q(beta, b) * db
            string.append(s.truncate(F.max_degree - 1))
            dil.append(dl.truncate(F.max_degree - 1))
    for alpha in range(n):
        for a in range(A + 1):
            for beta in range(n):
                for b in range(B):
                    for gamma in range(n):
                        for c in range(B + 1):
                            lhs = D.d2(alpha, a, beta, b + 1, gamma, c)
                            rhs = lhs.zero_like()
                            for mu in range(n):
                                rhs = rhs + D.d1(mu, 0, beta, b) * D.d2(alpha, a, mu, 0, gamma, c)
                            (trr if a == 0 else trr1).append(lhs - rhs)
            if a + 1 <= A:
                for beta in range(n):
                    for b in range(B + 1):
                        if b + 1 <= B:
                            lhs = D.d1(alpha, a + 1, beta, b) + D.d1(alpha, a, beta, b + 1)
                            rhs = lhs.zero_like()
                            for mu in range(n):
                                rhs = rhs + D.d1(alpha, a, mu, 0) * D.d1(mu, 0, beta, b)
                            rel.append(lhs - rhs)
                        for gamma in range(n):
                            for c in range(B + 1):
                                lhs = D.d2(alpha, a + 1, beta, b, gamma, c)
                                rhs = lhs.zero_like()
                                for mu in range(n):
                                    rhs = rhs + D.d1(alpha, a, mu, 0) * D.d2(mu, 0, beta, b, gamma, c)
                                trr2.append(lhs - rhs)
    return ConeReport(
        _norm(string), _norm(dil), _norm(trr), _norm(rel), _norm(trr1), _norm(trr2), is_ancestor(fam), degree_bound_holds(fam)
    )


def perturb(fam: DescendantFamily, alpha: int, a: int, insertions, amount) -> DescendantFamily:
    exps = [0] * fam.nvars
    for beta, b in insertions:
        exps[var(fam.N, beta, b)] += 1
    s = fam.potentials[(alpha, a)]
    bump = TruncatedSeries(s.nvars, {tuple(exps): amount}, max_degree=s.max_degree, weights=s.weights)
    pots = dict(fam.potentials)
    pots[(alpha, a)] = s + bump
    return replace(fam, potentials=pots, notes=list(fam.notes) + ["perturbed"])


def tangency_matrix(fam: DescendantFamily):
    """A^g d^2 F^{beta,0} / dt^alpha_0 dt^g_0 at the base point, indexed [beta][alpha].

    Finite stand-in for the statement that each tangent space touches the
    cone exactly along z times itself: the matrix must be the identity.
    """
    n = fam.N
    out = []
    for beta in range(n):
        row = []
        for alpha in range(n):
            val = mpq(0)
            for g in range(n):
                if fam.unit[g]:
                    s = fam.F(beta, 0).partial(var(n, alpha, 0)).partial(var(n, g, 0))
                    val += fam.unit[g] * s.constant_term()
            row.append(val)
        out.append(tuple(row))
    return tuple(out)


# group actions -----------------------------------------------------------------------


def act_gl(M, fam: DescendantFamily) -> DescendantFamily:
    """(M.F)^{alpha,a}(t~) = M^alpha_mu F^{mu,a}(M^{-1} t~)."""
    n = fam.N
    M = tuple(tuple(rational(x) for x in row) for row in M)
    Minv = mat_inverse(M)
    zero = fam.zero()
    subs = [None] * fam.nvars
    for b in range(fam.B + 1):
        for beta in range(n):
            s = zero
            for g in range(n):
                if Minv[beta][g]:
                    s = s + zero.variable_like(var(n, g, b)).scale(Minv[beta][g])
            subs[var(n, beta, b)] = s
    cache = {}
    composed = {key: s.compose(subs, cache) for key, s in fam.potentials.items()}
    pots = {}
    for (alpha, a) in fam.potentials:
        s = zero
        for mu in range(n):
            if M[alpha][mu]:
                s = s + composed[(mu, a)].scale(M[alpha][mu])
        pots[(alpha, a)] = s
    unit = tuple(sum((M[a][m] * fam.unit[m] for m in range(n)), mpq(0)) for a in range(n))
    origin = tuple(sum((M[a][m] * fam.origin[m] for m in range(n)), mpq(0)) for a in range(n))
    return DescendantFamily(n, unit, fam.B, fam.P, pots, origin, fam.weighted, list(fam.notes) + ["GL action"])


def _weighted_copy(fam: DescendantFamily, W: int) -> dict:
    w = _weights(fam.N, fam.B)
    out = {}
    for key, s in fam.potentials.items():
        if s.weights is not None:
            out[key] = s.truncate(W)
        else:
            out[key] = s.reindex(s.nvars, list(range(s.nvars)), weights=w, max_degree=W)
    return out


def act_R_bounds(P: int, K: int) -> dict:
    """Input requirements for an output exact in total degree P."""
    W = P
    return {"weight": W, "P_in": 2 * W - 2, "B_in": W - 1, "A_in": W - 2, "P_out": min(W, K + 2)}


def act_R(R: MatrixZSeries, fam: DescendantFamily, *, weight: int | None = None, A_out: int | None = None) -> DescendantFamily:
    """Transform ancestor potentials by R(z) in the upper triangular group.

    Works in the weight that counts t_0 and t_1 only.  The degree bound of
    ancestor families makes F^{b} vanish below weight b + 2 and makes them
    polynomial in t_{>=2}, so the sums over R_i stop at i = K without loss up
    to weight K + 2, and the constant shifts of t_{>=2} created by the change
    of variables are exact.  The output is exact up to weight
    min(weight, K + 2); it is returned as a weighted family.
    """
    if not is_ancestor(fam):
        raise NotAncestorError("R-action needs an ancestor family")
    n, B = fam.N, fam.B
    K = R.z_order
    W = weight if weight is not None else (fam.P if fam.weighted else (fam.P + 2) // 2)
    if not fam.weighted and fam.P < 2 * W - 2:
        raise TruncationError(f"input total degree {fam.P} cannot carry weight {W} (need {2 * W - 2})")
    if fam.weighted and fam.P < W:
        raise TruncationError(f"input weight {fam.P} < {W}")
    if B < W - 1:
        fam_note = f"levels > {B} dropped; exact only for t~ restricted to levels <= {B} with B >= weight - 1"
        raise TruncationError(fam_note)
    A_out = fam.A_max if A_out is None else A_out
    if fam.A_max < min(A_out + K, W - 2):
        raise TruncationError("input family index too small for the R-sums")
    W_out = min(W, K + 2)
    pots = _weighted_copy(fam, W)
    w = _weights(n, B)
    zero = TruncatedSeries.zero(fam.nvars, W, weights=w)
    Rm = [tuple(tuple(rational(x) for x in row) for row in c) for c in R.coeffs]
    if any(not (Rm[0][i][j] == (1 if i == j else 0)) for i in range(n) for j in range(n)):
        raise ValueError("R(0) must be the identity")

    def Fw(mu, b):
        if b < 0:
            return qw(mu, -b - 1).scale(_sign(b + 1))
        if b > fam.A_max:
            return zero
        return pots[(mu, b)]

    def qw(mu, b):
        if b > B:
            return zero
        x = zero.variable_like(var(n, mu, b))
        return x - fam.unit[mu] if b == 1 else x

    def apply(Ri, vecs):
        out = []
        for a in range(n):
            s = zero
            for m in range(n):
                if Ri[a][m]:
                    s = s + vecs[m].scale(Ri[a][m])
            out.append(s)
        return out

    # q~ as functions of t; store T~ - t
    delta = [None] * fam.nvars
    for a in range(B + 1):
        acc = [zero] * n
        for i in range(1, min(a, K) + 1):
            acc = [x + y for x, y in zip(acc, apply(Rm[i], [qw(m, a - i) for m in range(n)]))]
        for i in range(a + 1, K + 1):
            sign = _sign(i - a)
            acc = [x + y.scale(sign) for x, y in zip(acc, apply(Rm[i], [Fw(m, i - a - 1) for m in range(n)]))]
        for alpha in range(n):
            delta[var(n, alpha, a)] = acc[alpha]
    Ft = {}
    for a in range(A_out + 1):
        acc = [Fw(alpha, a) for alpha in range(n)]
        for i in range(1, K + 1):
            acc = [x + y.scale(_sign(i)) for x, y in zip(acc, apply(Rm[i], [Fw(m, a + i) for m in range(n)]))]
        for alpha in range(n):
            Ft[(alpha, a)] = acc[alpha]
    # invert t -> t~ by fixed point: t = t~ - delta(t)
    ident = [zero.variable_like(i) for i in range(fam.nvars)]
    G = list(ident)
    for it in range(B + 2 * W + 4):
        cache = {}
        nxt = [ident[i] - delta[i].compose(G, cache) for i in range(fam.nvars)]
        if nxt == G:
            break
        G = nxt
    else:
        raise TruncationError("inverse change of variables did not stabilise")
    cache = {}
    out = {}
    for key, s in Ft.items():
        out[key] = s.compose(G, cache).truncate(W_out)
    res = DescendantFamily(n, fam.unit, B, W_out, out, fam.origin, True, list(fam.notes) + [f"R-action K={K}"])
    return res


def act_S(S: Sequence, fam: DescendantFamily) -> DescendantFamily:
    """Action of S(z) = Id + sum_i S_i z^{-i}; ``S`` lists S_1, S_2, ...

    The transformed potentials are written in the new variables through the
    linear map q' = S q (q'_a = q_a + sum_i S_i q_{a+i}), inverted exactly;
    the new origin is origin - S_1 A.
    """
    n, B = fam.N, fam.B
    S = [tuple(tuple(rational(x) for x in row) for row in m) for m in S]
    if fam.weighted:
        raise ValueError("S-action is implemented for degree-truncated families")
    ident = mat_identity(n)
    zs = MatrixZSeries([ident] + list(S), max(len(S), B))
    Sinv = zs.inverse().coeffs[1:]
    zero = fam.zero()

    def Si(i):
        return S[i - 1] if 1 <= i <= len(S) else None

    def apply(M, vec):
        out = []
        for a in range(n):
            s = zero
            for m in range(n):
                if M[a][m]:
                    s = s + vec[m].scale(M[a][m])
            out.append(s)
        return out

    pots = {}
    for a in range(fam.A_max + 1):
        acc = [fam.F(alpha, a) for alpha in range(n)]
        for i in range(1, a + 1):
            M = Si(i)
            if M is not None:
                acc = [x + y.scale(_sign(i)) for x, y in zip(acc, apply(M, [fam.F(m, a - i) for m in range(n)]))]
        for i in range(a + 1, len(S) + 1):
            if i - a - 1 > B:
                continue
            acc = [x + y.scale(_sign(a + 1)) for x, y in zip(acc, apply(S[i - 1], [fam.q(m, i - a - 1) for m in range(n)]))]
        for alpha in range(n):
            pots[(alpha, a)] = acc[alpha]
    # old variables in terms of new ones: t_b = t'_b + sum_i S~_i t'_{b+i} (constants cancel)
    subs = [None] * fam.nvars
    for b in range(B + 1):
        for beta in range(n):
            s = zero.variable_like(var(n, beta, b))
            for i, M in enumerate(Sinv, start=1):
                if b + i > B:
                    break
                for g in range(n):
                    if M[beta][g]:
                        s = s + zero.variable_like(var(n, g, b + i)).scale(M[beta][g])
            subs[var(n, beta, b)] = s
    cache = {}
    pots = {k: v.compose(subs, cache) for k, v in pots.items()}
    origin = tuple(
        fam.origin[a] - (sum((S[0][a][m] * fam.unit[m] for m in range(n)), mpq(0)) if S else 0) for a in range(n)
    )
    return DescendantFamily(n, fam.unit, B, fam.P, pots, origin, False, list(fam.notes) + ["S-action"])


def to_ancestor(F: VectorPotential, cal: Calibration, A_max: int, P: int, B: int):
    """Carry the family of an arbitrary calibration of a centered F to the
    ancestor family by two lower-triangular steps.

    First S_1 with S_1 A = origin moves the origin to zero; then
    S = (Id + sum_j (-1)^j Omega~^{j-1}_0(0) z^{-j})^{-1}, built from the
    calibration after the first step.  Returns (result, first step, S).
    """
    n = F.N
    fam = descendant_potentials(F, cal, A_max, P, B)
    k = next(i for i in range(n) if F.unit[i])
    S1 = tuple(tuple(fam.origin[a] / F.unit[k] if b == k else mpq(0) for b in range(n)) for a in range(n))
    step = act_S([S1], fam)
    G = MatrixZSeries([mat_identity(n), tuple(tuple(-x for x in row) for row in S1)], cal.K)
    cal1 = calibrated(F, cal, G)
    mats = [mat_identity(n)]
    for j in range(1, B + A_max + 2):
        up = cal1.upper(j - 1)
        mats.append(tuple(tuple(_sign(j) * up[a][b].constant_term() for b in range(n)) for a in range(n)))
    S = MatrixZSeries(mats, len(mats) - 1).inverse().coeffs[1:]
    return act_S(list(S), step), step, S


def jet_shift_t0(fam: DescendantFamily, shift) -> DescendantFamily:
    """f(s_0 + shift) to first order, for a shift whose value part is zero
    (``shift`` entries are Jets); the order drops by one."""
    n = fam.N
    pots = {}
    for key, s in fam.potentials.items():
        out = s.truncate(s.max_degree - 1)
        for beta in range(n):
            out = out + s.partial(var(n, beta, 0)).truncate(s.max_degree - 1).map_coefficients(lambda c, sh=shift[beta]: c * sh)
        pots[key] = out
    return DescendantFamily(n, fam.unit, fam.B, fam.P - 1, pots, (mpq(0),) * n, fam.weighted, list(fam.notes))


# J-function and reconstruction --------------------------------------------------------


def j_function(fam: DescendantFamily, k_max: int | None = None) -> list:
    """[J_1, J_2, ...]: J_k[alpha] = F^{alpha,k-1} at t_{>=1} = 0, as series in
    the shifted t_0 (variable index beta)."""
    n = fam.N
    k_max = fam.A_max + 1 if k_max is None else k_max
    higher = [var(n, beta, b) for b in range(1, fam.B + 1) for beta in range(n)]
    mapping = [i if i < n else 0 for i in range(fam.nvars)]
    out = []
    for k in range(1, k_max + 1):
        vec = []
        for alpha in range(n):
            s = fam.F(alpha, k - 1).restrict_zero(higher)
            vec.append(s.reindex(n, mapping, weights=None, max_degree=s.max_degree))
        out.append(tuple(vec))
    return out


def j_from_calibration(cal: Calibration, k_max: int) -> list:
    """J-function read off the parameterised cone: J_{a+1} = Omega^{a+1}_0 A in
    the variable t_0 + c."""
    n = cal.potential.N
    A = cal.potential.unit
    out = []
    for k in range(1, k_max + 1):
        mat = cal.upper(k)
        vec = []
        for alpha in range(n):
            s = mat[alpha][0].zero_like()
            for b in range(n):
                if A[b]:
                    s = s + mat[alpha][b].scale(A[b])
            vec.append(s)
        out.append(tuple(vec))
    if any(cal.shift):
        out = [tuple(s.rebase(tuple(-c for c in cal.shift)) for s in vec) for vec in out]
    return out


@dataclass
class Reconstruction:
    psi0: tuple
    R0: MatrixZSeries
    gauge: str
    residual: list  # differing (alpha, a) keys; empty means exact agreement
    target: DescendantFamily | None = None
    rebuilt: DescendantFamily | None = None

    @property
    def ok(self) -> bool:
        return not self.residual


def reconstruct_R(
    F: VectorPotential,
    euler=None,
    *,
    A_max: int = 2,
    P: int = 4,
    B: int = 3,
    K: int = 3,
    diag_constants=None,
    verify: bool = True,
) -> Reconstruction:
    """Psi(0), R(z, 0) and the check that Psi^{-1}(0) R^{-1}(-z,0) Psi(0)
    applied to the ancestor family of the constant part gives the ancestor
    family of F."""
    from .ffmanifold import semisimple_frame
    from .rmatrix import rmatrix_homogeneous, rmatrix_sequence

    frame = semisimple_frame(F, euler)
    if euler is not None and diag_constants is None:
        Rs = rmatrix_homogeneous(frame, K)
        gauge = "homogeneous"
    else:
        Rs = rmatrix_sequence(frame, K, diag_constants)
        gauge = "free"
    R0 = Rs.at_base()
    psi0 = frame.psi_at_base()
    if not verify:
        return Reconstruction(psi0, R0, gauge, [])
    bad, target, rebuilt = reconstruction_check(F, psi0, R0, A_max=A_max, P=P, B=B)
    return Reconstruction(psi0, R0, gauge, bad, target, rebuilt)


def reconstruction_check(F: VectorPotential, psi0, R0: MatrixZSeries, *, A_max: int, P: int, B: int):
    """Differing keys between the ancestor family of F and
    Psi^{-1}(0) R^{-1}(-z) Psi(0) applied to that of its constant part."""
    K = R0.z_order
    target = ancestor_family(F, A_max, P, B)
    bounds = act_R_bounds(P, K)
    const = constant_part(F, bounds["P_in"] + 1)
    src = ancestor_family(const, max(A_max, bounds["A_in"]), bounds["P_in"], max(B, bounds["B_in"]))
    step = act_gl(psi0, src)
    step = act_R(R0.inverse().negate_z(), step, weight=bounds["weight"], A_out=A_max)
    rebuilt = act_gl(mat_inverse(psi0), step)
    _, bad = families_equal(rebuilt, target, P=P)
    return bad, target, rebuilt


def infinitesimal_R_check(fam: DescendantFamily, r: Sequence, *, weight: int | None = None):
    """Compare d/d eps (e^{eps r}.F) at eps = 0 with the closed infinitesimal
    formula.  ``r`` lists r_1, r_2, ...  The left side is computed with Jet
    coefficients, so it is exact at first order."""
    from .pseries import Jet

    n = fam.N
    K = len(r)
    gen = [mat_zero(n)] + [tuple(tuple(Jet(0, [rational(x)]) for x in row) for row in m) for m in r]
    one = [tuple(tuple(Jet(1 if i == j else 0, [0]) for j in range(n)) for i in range(n))]
    R = MatrixZSeries(one + gen[1:], K)
    lifted = _lift_family(fam, lambda c: Jet(c, [0]))
    moved = act_R(R, lifted, weight=weight)
    W_out = moved.P
    lhs = {k: s.map_coefficients(lambda c: c.tangent[0] if isinstance(c, Jet) else 0) for k, s in moved.potentials.items()}
    # right side in the same weighted ring
    base = _weighted_copy(fam, W_out)
    zero = next(iter(base.values())).zero_like()
    rr = [tuple(tuple(rational(x) for x in row) for row in m) for m in r]

    def Fw(mu, b):
        if b < 0:
            x = zero.variable_like(var(n, mu, -b - 1)) if -b - 1 <= fam.B else zero
            if -b - 1 == 1:
                x = x - fam.unit[mu]
            return x.scale(_sign(b + 1))
        if b > fam.A_max:
            return zero
        return base[(mu, b)]

    bad = []
    for (alpha, a), left in lhs.items():
        s = zero
        for i in range(1, K + 1):
            for mu in range(n):
                if rr[i - 1][alpha][mu]:
                    s = s + Fw(mu, a + i).scale(_sign(i) * rr[i - 1][alpha][mu])
        for i in range(1, K + 1):
            for j in range(fam.B + 1):
                for mu in range(n):
                    for nu in range(n):
                        c = rr[i - 1][mu][nu]
                        if not c:
                            continue
                        dF = base[(alpha, a)].partial(var(n, mu, j))
                        s = s + (dF * Fw(nu, i - j - 1)).scale(_sign(i - j - 1) * c)
        diff = (left - s).truncate(W_out - 1)
        if not diff.is_zero():
            bad.append((alpha, a))
    return bad


def _lift_family(fam: DescendantFamily, f) -> DescendantFamily:
    pots = {k: s.map_coefficients(f) for k, s in fam.potentials.items()}
    return replace(fam, potentials=pots, notes=list(fam.notes))


def shifted_ancestor_check(F: VectorPotential, A_max: int, P: int, B: int):
    """First-order check that the ancestor family of F(t + tau) equals the
    S-dressed ancestor family of F with S = (Id + sum_j (-1)^j Omega^{j-1}_0(tau) z^{-j})^{-1}.

    tau is a formal first-order parameter in every direction (Jet tangent).
    Returns the list of differing keys at total degree P - 1.
    """
    from .pseries import Jet

    n = F.N
    Fc = F.centered()

    def jet_var(beta):
        return Jet(0, [1 if g == beta else 0 for g in range(n)])

    def lift(c):
        return Jet(c, [0] * n)

    # F(t + tau) = F + tau^beta d_beta F to first order
    shifted = []
    for f in Fc.potentials:
        g = f.map_coefficients(lift)
        for beta in range(n):
            g = g + f.partial(beta).map_coefficients(lambda c, b=beta: c * jet_var(b))
        shifted.append(g.truncate(Fc.max_degree - 1))
    Ftau = VectorPotential(tuple(shifted), Fc.unit)
    left = ancestor_family(Ftau, A_max, P - 1, B)
    # right side
    cal = ancestor_calibration(Fc, A_max + B + 2)
    base = descendant_potentials(Fc, cal, A_max, P, B)
    S_terms = []
    jmax = A_max + B + 1
    # Omega^{j-1}_0(tau) = tau^g d_g Omega^{j-1}_0(0) (Omega vanishes at 0 for j >= 1)
    mats = []
    for j in range(1, jmax + 1):
        Om = cal.upper(j - 1)
        m = tuple(
            tuple(sum((Om[a][b].coefficient([1 if i == g else 0 for i in range(n)]) * jet_var(g) for g in range(n)), lift(0)) for b in range(n))
            for a in range(n)
        )
        mats.append(tuple(tuple(x * (_sign(j)) for x in row) for row in m))
    ident = tuple(tuple(lift(1 if i == j else 0) for j in range(n)) for i in range(n))
    Linv = MatrixZSeries([ident] + mats, jmax).inverse()
    S_terms = list(Linv.coeffs[1:])
    lifted = _lift_family(base, lift)
    dressed = _act_S_generic(S_terms, lifted)
    # new origin is -tau (formal): re-expand around 0
    shift = [-jet_var(beta) for beta in range(n)]
    shifted_fam = jet_shift_t0(replace(dressed, origin=(mpq(0),) * n), [-s for s in shift])
    _, bad = _families_equal_generic(shifted_fam, left, P - 1)
    return bad


def _act_S_generic(S, fam):
    """act_S for ring-valued S (entries may be Jets); origin is left unchanged
    and returned separately by the caller's convention."""
    n, B = fam.N, fam.B
    zero = fam.zero()
    ident = tuple(tuple(1 if i == j else 0 for j in range(n)) for i in range(n))
    zs = MatrixZSeries([ident] + list(S), max(len(S), B))
    Sinv = zs.inverse().coeffs[1:]

    def apply(M, vec):
        out = []
        for a in range(n):
            s = zero
            for m in range(n):
                if M[a][m]:
                    s = s + vec[m] * M[a][m]
            out.append(s)
        return out

    def q(m, b):
        x = fam.t(m, b)
        if b == 0:
            return x + fam.origin[m]
        if b == 1:
            return x - fam.unit[m]
        return x

    pots = {}
    for a in range(fam.A_max + 1):
        acc = [fam.F(alpha, a) for alpha in range(n)]
        for i in range(1, a + 1):
            if i <= len(S):
                acc = [x + y * (_sign(i)) for x, y in zip(acc, apply(S[i - 1], [fam.F(m, a - i) for m in range(n)]))]
        for i in range(a + 1, len(S) + 1):
            if i - a - 1 > B:
                continue
            acc = [x + y * (_sign(a + 1)) for x, y in zip(acc, apply(S[i - 1], [q(m, i - a - 1) for m in range(n)]))]
        for alpha in range(n):
            pots[(alpha, a)] = acc[alpha]
    subs = [None] * fam.nvars
    for b in range(B + 1):
        for beta in range(n):
            s = zero.variable_like(var(n, beta, b))
            for i, M in enumerate(Sinv, start=1):
                if b + i > B:
                    break
                for g in range(n):
                    if M[beta][g]:
                        s = s + zero.variable_like(var(n, g, b + i)) * M[beta][g]
            subs[var(n, beta, b)] = s
    cache = {}
    pots = {k: v.compose(subs, cache) for k, v in pots.items()}
    return DescendantFamily(n, fam.unit, B, fam.P, pots, fam.origin, False, list(fam.notes) + ["S-action"])


def _families_equal_generic(x, y, P):
    bad = []
    for key in sorted(set(x.potentials) & set(y.potentials)):
        a = x.potentials[key].truncate(P)
        b = y.potentials[key].truncate(P)
        if not (a - b).is_zero():
            bad.append(key)
    return not bad, bad
