"""Flat F-manifolds given by a vector potential, and their semisimple frame.

Everything is expanded around the base point of the potential, in the shifted
flat variables ``x = t - base``.  Orders are tracked honestly: a potential
known to degree D gives structure constants to D-2, characters to D-2,
canonical coordinates to D-1 and the connection data to D-3.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

import sympy
from gmpy2 import mpq

from .pseries import (
    MPQ,
    TruncatedSeries,
    frac_str,
    integrate_closed_form,
    mat_inverse,
    mat_mul,
    mat_at_base,
    rational,
)


class NotSemisimpleError(ValueError):
    pass


class IrrationalEigenDataError(ValueError):
    """Exact mode cannot represent the eigen-data at this base point."""


class EulerFieldError(ValueError):
    def __init__(self, message, alpha=None, exponents=None, value=None):
        super().__init__(message)
        self.alpha = alpha
        self.exponents = exponents
        self.value = value


def d(series: TruncatedSeries, i: int) -> TruncatedSeries:
    """Partial derivative with the order lowered to what is actually known."""
    return series.partial(i).truncate(max(series.max_degree - 1, 0))


def _norm(series_list) -> MPQ:
    best = mpq(0)
    for s in series_list:
        m = s.max_abs_coefficient() if isinstance(s, TruncatedSeries) else abs(rational(s))
        if m > best:
            best = m
    return best


def _first_term(series: TruncatedSeries):
    items = series.items()
    return items[0] if items else None


@dataclass(frozen=True)
class VectorPotential:
    """The N functions F^alpha, stored as series around ``base_point``."""

    potentials: tuple
    unit: tuple

    def __post_init__(self):
        ref = self.potentials[0]
        for f in self.potentials:
            ref._check(f)
        if len(self.potentials) != ref.nvars or len(self.unit) != ref.nvars:
            raise ValueError("need N potentials and an N-vector unit")
        object.__setattr__(self, "unit", tuple(rational(a) for a in self.unit))

    @property
    def N(self) -> int:
        return len(self.potentials)

    @property
    def base_point(self) -> tuple:
        return self.potentials[0].base_point

    @property
    def max_degree(self) -> int:
        return min(f.max_degree for f in self.potentials)

    @classmethod
    def from_polynomials(cls, polys, unit, max_degree: int, base_point=None) -> "VectorPotential":
        """Build from polynomials in the flat coordinates t (maps exponents -> coefficient)."""
        n = len(polys)
        series = [TruncatedSeries(n, p, max_degree=max_degree) for p in polys]
        if base_point is not None and any(rational(b) for b in base_point):
            series = [s.rebase(base_point) for s in series]
        return cls(tuple(series), tuple(unit))

    def rebased(self, new_base) -> "VectorPotential":
        return VectorPotential(tuple(f.rebase(new_base) for f in self.potentials), self.unit)

    def centered(self) -> "VectorPotential":
        """The same germ with the base point relabelled as the origin."""
        zero = (mpq(0),) * self.N
        return VectorPotential(
            tuple(
                TruncatedSeries._raw(f.nvars, zero, f.max_degree, f.weights, dict(f.packed_items()))
                for f in self.potentials
            ),
            self.unit,
        )

    def truncated(self, degree: int) -> "VectorPotential":
        return VectorPotential(tuple(f.truncate(degree) for f in self.potentials), self.unit)


@dataclass
class ValidationReport:
    unit_residual: MPQ
    associativity_residual: MPQ
    first_violation: str | None = None

    @property
    def valid(self) -> bool:
        return self.unit_residual == 0 and self.associativity_residual == 0

    @property
    def residuals(self):
        return (self.unit_residual, self.associativity_residual)


def structure_constants(F: VectorPotential):
    """c[alpha][beta][gamma] = d^2 F^alpha / dt^beta dt^gamma (order D-2)."""
    n = F.N
    first = [[d(F.potentials[a], b) for b in range(n)] for a in range(n)]
    return tuple(
        tuple(tuple(d(first[a][b], c) for c in range(n)) for b in range(n)) for a in range(n)
    )


def validate_vector_potential(F: VectorPotential) -> ValidationReport:
    n = F.N
    c = structure_constants(F)
    unit_res = []
    first = None
    for a in range(n):
        for b in range(n):
            s = sum((c[a][m][b].scale(F.unit[m]) for m in range(n) if F.unit[m]), c[a][b][b].zero_like())
            s = s - (1 if a == b else 0)
            unit_res.append(s)
            if first is None and not s.is_zero():
                exps, val = _first_term(s)
                first = f"unit axiom (alpha={a + 1}, beta={b + 1}): coefficient {frac_str(val)} at x^{list(exps)}"
    assoc = []
    for a in range(n):
        for b in range(n):
            for g in range(b + 1, n):
                for dd in range(n):
                    s = c[a][b][0].zero_like()
                    for m in range(n):
                        s = s + c[a][b][m] * c[m][g][dd] - c[a][g][m] * c[m][b][dd]
                    assoc.append(s)
                    if first is None and not s.is_zero():
                        exps, val = _first_term(s)
                        first = (
                            f"associativity (alpha={a + 1}, beta={b + 1}, gamma={g + 1}, delta={dd + 1}):"
                            f" coefficient {frac_str(val)} at x^{list(exps)}"
                        )
    return ValidationReport(_norm(unit_res), _norm(assoc), first)


@dataclass(frozen=True)
class EulerData:
    """E = sum_a ((1 - q_a) t^a + r^a) d/dt^a and the affine remainder A t + B."""

    q: tuple
    r: tuple
    A: tuple
    B: tuple

    @property
    def N(self):
        return len(self.q)

    def components(self, like: TruncatedSeries) -> list[TruncatedSeries]:
        """E^alpha as series in the shifted variables of ``like``."""
        out = []
        for a in range(self.N):
            s = like.variable_like(a).scale(1 - self.q[a]) + ((1 - self.q[a]) * like.base_point[a] + self.r[a])
            out.append(s)
        return out

    def at(self, point) -> tuple:
        return tuple((1 - self.q[a]) * rational(point[a]) + self.r[a] for a in range(self.N))


def euler_data(F: VectorPotential, q: Sequence, r: Sequence) -> EulerData:
    """Check homogeneity of F for the given (q, r) and return the affine data.

    Raises :class:`EulerFieldError` carrying the first violating coefficient
    (reported in the unshifted flat coordinates).
    """
    n = F.N
    q = tuple(rational(x) for x in q)
    r = tuple(rational(x) for x in r)
    for a in range(n):
        if F.unit[a] and q[a]:
            raise EulerFieldError(
                f"[e,E]=e fails: unit component {a + 1} is nonzero but q_{a + 1} = {frac_str(q[a])}", alpha=a
            )
    E = EulerData(q, r, (), ()).components(F.potentials[0])
    top = F.max_degree - 1
    A = []
    B = []
    for a in range(n):
        f = F.potentials[a]
        g = sum((E[m] * d(f, m) for m in range(n)), f.zero_like()).truncate(top) - f.scale(2 - q[a]).truncate(top)
        bad = g.truncate(top)
        nonaffine = [(e, v) for e, v in bad.items() if sum(e) >= 2]
        if nonaffine:
            flat = g.rebase((0,) * n) if any(F.base_point) else g
            cand = [(e, v) for e, v in flat.items() if sum(e) >= 2]
            exps, val = cand[0] if cand else nonaffine[0]
            raise EulerFieldError(
                f"Euler homogeneity fails for F^{a + 1}: coefficient {frac_str(val)} of t^{list(exps)}",
                alpha=a,
                exponents=tuple(exps),
                value=val,
            )
        row = tuple(g.coefficient(tuple(1 if i == b else 0 for i in range(n))) for b in range(n))
        const = g.constant_term() - sum(row[b] * F.base_point[b] for b in range(n))
        A.append(row)
        B.append(const)
    return EulerData(q, r, tuple(A), tuple(B))


# rational linear algebra -------------------------------------------------------


def _rref(rows):
    rows = [list(r) for r in rows]
    m = len(rows[0]) if rows else 0
    pivots = []
    rank = 0
    for col in range(m):
        piv = next((i for i in range(rank, len(rows)) if rows[i][col]), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        inv = mpq(1) / rows[rank][col]
        rows[rank] = [x * inv for x in rows[rank]]
        for i in range(len(rows)):
            if i != rank and rows[i][col]:
                f = rows[i][col]
                rows[i] = [x - f * y for x, y in zip(rows[i], rows[rank])]
        pivots.append(col)
        rank += 1
    return rows, pivots


def nullspace(matrix):
    """Basis of {v : matrix v = 0} over Q."""
    m = len(matrix[0])
    rows, pivots = _rref(matrix)
    free = [c for c in range(m) if c not in pivots]
    basis = []
    for f in free:
        v = [mpq(0)] * m
        v[f] = mpq(1)
        for i, p in enumerate(pivots):
            v[p] = -rows[i][f]
        basis.append(tuple(v))
    return basis


def solve_consistent(matrix, rhs):
    """Solve an (over)determined consistent system exactly; raise if inconsistent."""
    aug = [list(row) + [b] for row, b in zip(matrix, rhs)]
    m = len(matrix[0])
    rows, pivots = _rref(aug)
    if m in pivots:
        raise ArithmeticError("inconsistent linear system")
    x = [mpq(0)] * m
    for i, p in enumerate(pivots):
        x[p] = rows[i][m]
    return tuple(x)


def _rational_roots(matrix):
    n = len(matrix)
    lam = sympy.Symbol("lam")
    sm = sympy.Matrix(n, n, lambda i, j: sympy.Rational(int(matrix[i][j].numerator), int(matrix[i][j].denominator)))
    poly = sympy.Poly(sm.charpoly(lam).as_expr(), lam, domain=sympy.QQ)
    if poly.degree() > 0 and sympy.discriminant(poly) == 0:
        return None, "repeated"
    roots = sympy.roots(poly, filter="Q")
    if sum(roots.values()) < n:
        return None, "irrational"
    vals = sorted(mpq(int(sympy.Rational(r).p), int(sympy.Rational(r).q)) for r in roots)
    return vals, "ok"


# canonical coordinates ---------------------------------------------------------


@dataclass
class CanonicalCoordinates:
    u: tuple
    characters: tuple  # rows of PsiTilde: character i as N series
    direction: tuple
    direction_source: str
    attempts: int
    base_values: tuple
    inverse: tuple | None = None
    notes: list = field(default_factory=list)

    @property
    def psi_tilde(self):
        return self.characters


def _multiplication_matrix(c_base, v):
    n = len(v)
    return tuple(
        tuple(sum((v[b] * c_base[a][b][g] for b in range(n)), mpq(0)) for g in range(n)) for a in range(n)
    )


def _direction_candidates(F, euler, direction, max_attempts, seed):
    n = F.N
    if direction is not None:
        yield tuple(rational(x) for x in direction), "user"
        return
    count = 0
    if euler is not None:
        count += 1
        yield euler.at(F.base_point), "euler"
    for a in range(n):
        if count >= max_attempts:
            return
        count += 1
        yield tuple(mpq(1) if i == a else mpq(0) for i in range(n)), f"e_{a + 1}"
    rng = random.Random(seed)
    while count < max_attempts:
        count += 1
        yield tuple(mpq(rng.randint(-5, 5), rng.randint(1, 4)) for _ in range(n)), "random"


def canonical_coordinates(
    F: VectorPotential,
    euler: EulerData | None = None,
    *,
    direction=None,
    max_attempts: int = 12,
    seed: int = 0,
    with_inverse: bool = True,
) -> CanonicalCoordinates:
    n = F.N
    c = structure_constants(F)
    c_base = tuple(tuple(tuple(c[a][b][g].constant_term() for g in range(n)) for b in range(n)) for a in range(n))
    chosen = None
    attempts = 0
    notes = []
    saw_irrational = False
    for v, source in _direction_candidates(F, euler, direction, max_attempts, seed):
        attempts += 1
        L = _multiplication_matrix(c_base, v)
        roots, status = _rational_roots(L)
        if status == "ok":
            chosen = (v, source, L, roots)
            break
        notes.append(f"direction {source} {[frac_str(x) for x in v]} rejected: {status} eigenvalues")
        saw_irrational |= status == "irrational"
    if chosen is None:
        if saw_irrational:
            raise IrrationalEigenDataError(
                "irrational eigen-data at base point: exact mode cannot represent the canonical frame"
            )
        raise NotSemisimpleError("not semisimple at base point")
    v, source, L, roots = chosen
    if source != "euler" and euler is not None:
        notes.append(f"fallback direction used: {source}")

    base_chars = []
    for lam in roots:
        shifted = [[L[g][a] - (lam if a == g else 0) for g in range(n)] for a in range(n)]
        ker = nullspace(shifted)
        if len(ker) != 1:
            raise NotSemisimpleError("not semisimple at base point")
        psi = ker[0]
        s = sum((psi[a] * F.unit[a] for a in range(n)), mpq(0))
        if not s:
            raise NotSemisimpleError("eigen-covector annihilates the unit")
        psi = tuple(x / s for x in psi)
        for a in range(n):
            for b in range(n):
                lhs = sum((psi[g] * c_base[g][a][b] for g in range(n)), mpq(0))
                if lhs != psi[a] * psi[b]:
                    raise NotSemisimpleError("eigen-covector is not a character of the algebra")
        base_chars.append(psi)
    base_chars.sort(reverse=True)

    ref = c[0][0][0]
    D = ref.max_degree
    Lx = [[sum((c[a][b][g].scale(v[b]) for b in range(n) if v[b]), ref.zero_like()) for g in range(n)] for a in range(n)]
    characters = []
    for psi0 in base_chars:
        lam0 = sum((psi0[a] * v[a] for a in range(n)), mpq(0))
        # linearisation: delta -> delta (L0 - lam0) - (delta.v) psi0, with delta.A = 0
        lin = []
        for g in range(n):
            lin.append([L[a][g] - (lam0 if a == g else 0) - v[a] * psi0[g] for a in range(n)])
        lin.append(list(F.unit))
        psi = [ref.constant_like(psi0[a]) for a in range(n)]
        for k in range(1, D + 1):
            lam = sum((psi[a].scale(v[a]) for a in range(n) if v[a]), ref.zero_like())
            res = []
            for g in range(n):
                s = sum((psi[a] * Lx[a][g] for a in range(n)), ref.zero_like()) - lam * psi[g]
                res.append(s.truncate(k))
            degk = {}
            for g in range(n):
                for exps, val in res[g].items():
                    if sum(exps) == k:
                        degk.setdefault(exps, [mpq(0)] * n)[g] = val
                    elif sum(exps) < k and val:
                        raise ArithmeticError("character iteration lost an order")
            for exps, vals in degk.items():
                delta = solve_consistent(lin, [-x for x in vals] + [mpq(0)])
                mono = TruncatedSeries(n, {exps: 1}, max_degree=D, base_point=F.base_point)
                for a in range(n):
                    if delta[a]:
                        psi[a] = psi[a] + mono.scale(delta[a])
        characters.append(tuple(psi))
    # characters of the algebra at every point
    for psi in characters:
        for a in range(n):
            for b in range(n):
                lhs = sum((psi[g] * c[g][a][b] for g in range(n)), ref.zero_like())
                if not (lhs - psi[a] * psi[b]).is_zero():
                    raise ArithmeticError("character identity fails; potential is not associative")

    base_values = []
    u = []
    E = euler.components(ref) if euler is not None else None
    for psi in characters:
        u0 = mpq(0)
        if euler is not None:
            pt = euler.at(F.base_point)
            u0 = sum((psi[a].constant_term() * pt[a] for a in range(n)), mpq(0))
        ui = integrate_closed_form(list(psi), u0)
        base_values.append(u0)
        u.append(ui)
    if E is not None:
        for ui, psi in zip(u, characters):
            hom = sum((E[a] * psi[a] for a in range(n)), ref.zero_like()) - ui
            if not hom.truncate(D).is_zero():
                notes.append("u is not equal to psi(E); Euler field is not sum u^i d/du^i")
    inverse = _inverse_map(u, base_values, F.base_point) if with_inverse else None
    return CanonicalCoordinates(
        tuple(u), tuple(characters), tuple(v), source, attempts, tuple(base_values), inverse, notes
    )


def _inverse_map(u, u0, flat_base):
    """x(w) with u(x) = u0 + w, as series in w around u0."""
    n = len(u)
    D = min(s.max_degree for s in u)
    J = tuple(tuple(u[i].coefficient(tuple(1 if k == a else 0 for k in range(n))) for a in range(n)) for i in range(n))
    Jinv = mat_inverse(J)
    w = [TruncatedSeries.variable(i, n, D, base_point=u0) for i in range(n)]
    nonlinear = []
    for i in range(n):
        lin_terms = {e: v for e, v in u[i].coefficients.items() if sum(e) >= 2}
        nonlinear.append(TruncatedSeries(n, lin_terms, max_degree=D))
    x = [sum((w[i].scale(Jinv[a][i]) for i in range(n) if Jinv[a][i]), w[0].zero_like()) for a in range(n)]
    for _ in range(D):
        cache = {}
        nl = [f.compose(x, cache) for f in nonlinear]
        x = [
            sum(((w[i] - nl[i]).scale(Jinv[a][i]) for i in range(n) if Jinv[a][i]), w[0].zero_like())
            for a in range(n)
        ]
    return tuple(x)


def check_inverse_map(coords: CanonicalCoordinates) -> bool:
    u = coords.u
    x = coords.inverse
    n = len(u)
    D = min(s.max_degree for s in x)
    back = [
        TruncatedSeries._raw(n, x[0].base_point, s.max_degree, None, dict(s.packed_items())) for s in u
    ]
    shifted = [s - s.constant_term() for s in back]
    comp = [s.compose(list(x)) for s in shifted]
    ok = all((comp[i] - x[0].variable_like(i)).truncate(D).is_zero() for i in range(n))
    return ok


# frame -------------------------------------------------------------------------


@dataclass
class SemisimpleFrame:
    potential: VectorPotential
    coords: CanonicalCoordinates
    euler: EulerData | None
    psi_tilde: tuple
    psi_tilde_inv: tuple
    connection: tuple  # M^(k) = d_{u^k} PsiTilde . PsiTilde^{-1}
    D_tilde: tuple  # D_tilde[i][j]
    gamma_tilde: tuple
    H: tuple
    gamma: tuple
    psi: tuple
    metric: tuple
    christoffel: dict
    delta: tuple | None
    order: int
    notes: list = field(default_factory=list)

    @property
    def N(self):
        return self.potential.N

    @property
    def u(self):
        return self.coords.u

    def d_du(self, f: TruncatedSeries, k: int) -> TruncatedSeries:
        """Derivative along d/du^k = sum_a (PsiTilde^{-1})_{a k} d/dt^a."""
        inv = self.psi_tilde_inv
        out = f.zero_like(max(f.max_degree - 1, 0))
        for a in range(self.N):
            out = out + inv[a][k] * d(f, a)
        return out

    def euler_derivative(self, f: TruncatedSeries) -> TruncatedSeries:
        """sum_k u^k d f / du^k."""
        out = f.zero_like()
        for k in range(self.N):
            out = out + self.u[k] * self.d_du(f, k)
        return out

    def psi_at_base(self):
        return mat_at_base(self.psi)

    def H_at_base(self):
        return tuple(h.constant_term() for h in self.H)


def semisimple_frame(F: VectorPotential, euler: EulerData | None = None, **kwargs) -> SemisimpleFrame:
    n = F.N
    coords = canonical_coordinates(F, euler, **kwargs)
    Pt = coords.characters
    order = F.max_degree - 3
    if order < 0:
        raise ValueError("potential truncation too low for a frame (need D >= 3)")
    Pinv = mat_inverse(Pt)
    Pinv = tuple(tuple(x.truncate(F.max_degree - 2) for x in row) for row in Pinv)
    flat_conn = []
    for a in range(n):
        dP = tuple(tuple(d(x, a) for x in row) for row in Pt)
        flat_conn.append(tuple(tuple(x.truncate(order) for x in row) for row in mat_mul(dP, Pinv, Pt[0][0].zero_like())))
    conn = []
    for k in range(n):
        Mk = [[Pt[0][0].zero_like(order) for _ in range(n)] for _ in range(n)]
        for a in range(n):
            coeff = Pinv[a][k]
            for i in range(n):
                for j in range(n):
                    Mk[i][j] = Mk[i][j] + (coeff * flat_conn[a][i][j]).truncate(order)
        conn.append(tuple(tuple(row) for row in Mk))
    conn = tuple(conn)
    gamma_t = tuple(
        tuple(conn[j][i][j] if i != j else conn[0][0][0].zero_like() for j in range(n)) for i in range(n)
    )
    D_t = tuple(tuple(conn[j][i][i] for j in range(n)) for i in range(n))
    # H_i = exp(-int D_i), with H_i(base) = 1
    H = []
    for i in range(n):
        log_h = integrate_closed_form([-flat_conn[a][i][i] for a in range(n)], 0)
        H.append(log_h.exp())
    H = tuple(H)
    Hinv = tuple(h.invert() for h in H)
    gamma = tuple(
        tuple(
            (H[i] * gamma_t[i][j] * Hinv[j]).truncate(order) if i != j else gamma_t[i][j] for j in range(n)
        )
        for i in range(n)
    )
    psi = tuple(tuple((H[i] * Pt[i][a]).truncate(F.max_degree - 2) for a in range(n)) for i in range(n))
    metric = tuple((h * h) for h in H)
    christoffel = {}
    for i in range(n):
        for j in range(n):
            for k in range(n):
                christoffel[(i, j, k)] = -conn[j][i][k]
    delta = None
    notes = list(coords.notes)
    if euler is not None:
        E = euler.components(Pt[0][0])
        vals = []
        for i in range(n):
            s = sum((E[a] * flat_conn[a][i][i] for a in range(n)), Pt[0][0].zero_like()).truncate(order)
            if any(sum(e) > 0 for e in s.coefficients):
                raise ArithmeticError(f"i_E D_tilde is not constant in component {i + 1}")
            vals.append(-s.constant_term())
        delta = tuple(vals)
    return SemisimpleFrame(
        F, coords, euler, Pt, Pinv, conn, D_t, gamma_t, H, gamma, psi, metric, christoffel, delta, order, notes
    )


# checks ------------------------------------------------------------------------


@dataclass
class DarbouxReport:
    egorov: MPQ
    christoffel: MPQ
    tsarev: MPQ
    decomposition: MPQ
    psi_equation: MPQ
    h_equation: MPQ
    unit_killing: MPQ
    homogeneity: MPQ | None = None

    @property
    def ok(self) -> bool:
        vals = [self.egorov, self.christoffel, self.tsarev, self.decomposition, self.psi_equation, self.h_equation, self.unit_killing]
        if self.homogeneity is not None:
            vals.append(self.homogeneity)
        return all(v == 0 for v in vals)

    def as_dict(self):
        return {k: frac_str(v) for k, v in self.__dict__.items() if v is not None}


def darboux_checks(frame: SemisimpleFrame, gamma=None) -> DarbouxReport:
    """Residual norms of the frame identities; ``gamma`` overrides the rotation
    coefficients (used to test that perturbations are detected)."""
    n = frame.N
    gam = frame.gamma if gamma is None else gamma
    gt = frame.gamma_tilde
    H = frame.H
    du = frame.d_du
    top = frame.order - 1
    egorov = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            total = gam[i][j].zero_like()
            for k in range(n):
                dk = du(gam[i][j], k)
                total = total + dk
                if k != i and k != j:
                    egorov.append((dk - gam[i][k] * gam[k][j]).truncate(top))
            egorov.append(total.truncate(top))
    # Christoffel symbols of the flat connection in canonical coordinates
    chris = []
    G = frame.christoffel
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if i == j == k:
                    ref = -sum((gt[i][m] for m in range(n) if m != i), gt[i][i].zero_like())
                elif i == j and k != i:
                    ref = gt[i][k]
                elif i == k and j != i:
                    ref = gt[i][j]
                elif j == k and i != j:
                    ref = -gt[i][j]
                else:
                    ref = gt[0][0].zero_like()
                chris.append(G[(i, j, k)] - ref)
    # the gamma-tilde system
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            total = gt[i][j].zero_like()
            for k in range(n):
                dk = du(gt[i][j], k)
                total = total + dk
                if k != i and k != j:
                    rhs = -gt[i][j] * gt[i][k] + gt[i][j] * gt[j][k] + gt[i][k] * gt[k][j]
                    chris.append((dk - rhs).truncate(top))
            chris.append(total.truncate(top))
    # Levi-Civita connection of g = sum H_i^2 du_i^2
    g = frame.metric
    ginv = tuple(x.invert() for x in g)
    dg = [[du(g[i], k) for k in range(n)] for i in range(n)]

    def lc(k, i, j):
        val = g[0].zero_like(frame.order)
        if k == i:
            val = val + dg[k][j]
        if k == j:
            val = val + dg[k][i]
        if i == j:
            val = val - dg[i][k]
        return (ginv[k] * val).scale(mpq(1, 2))

    tsarev = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if len({i, j, k}) < 3:
                    continue
                expr = -du(lc(k, i, i), j) + lc(k, i, i) * lc(i, i, j) - lc(k, j, j) * lc(j, i, i) - lc(k, k, j) * lc(k, i, i)
                tsarev.append(expr.truncate(top))
    killing = []
    for i in range(n):
        s = sum((dg[i][j] for j in range(n)), g[0].zero_like())
        killing.append(s.truncate(top))
    # decomposition of the connection matrix
    decomp = []
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                want = gt[i][j] if k == j else (-gt[i][j] if k == i else gt[0][0].zero_like())
                decomp.append(frame.connection[k][i][j] - want)
    # dPsi = [Gamma, dU] Psi and dHbar = [Gamma, dU] Hbar
    psi_eq = []
    h_eq = []
    P = frame.psi
    for k in range(n):
        for i in range(n):
            for a in range(n):
                lhs = du(P[i][a], k)
                rhs = P[0][0].zero_like()
                for j in range(n):
                    if j == i:
                        continue
                    if k == j:
                        rhs = rhs + gam[i][j] * P[j][a]
                    if k == i:
                        rhs = rhs - gam[i][j] * P[j][a]
                psi_eq.append((lhs - rhs).truncate(frame.order))
            lhs = du(H[i], k)
            rhs = H[0].zero_like()
            for j in range(n):
                if j == i:
                    continue
                if k == j:
                    rhs = rhs + gam[i][j] * H[j]
                if k == i:
                    rhs = rhs - gam[i][j] * H[j]
            h_eq.append((lhs - rhs).truncate(frame.order))
    # Sum_k dPsiTilde/du^k = 0
    for i in range(n):
        for a in range(n):
            s = sum((du(frame.psi_tilde[i][a], k) for k in range(n)), H[0].zero_like())
            psi_eq.append(s.truncate(frame.order))
    hom = None
    if frame.delta is not None:
        res = []
        for i in range(n):
            res.append((frame.euler_derivative(H[i]) - H[i].scale(frame.delta[i])).truncate(top))
            for j in range(n):
                if i != j:
                    res.append(
                        (frame.euler_derivative(gam[i][j]) - gam[i][j].scale(frame.delta[i] - frame.delta[j] - 1)).truncate(top - 1)
                    )
        hom = _norm(res)
    return DarbouxReport(
        _norm(egorov), _norm(chris), _norm(tsarev), _norm(decomp), _norm(psi_eq), _norm(h_eq), _norm(killing), hom
    )
