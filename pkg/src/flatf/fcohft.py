"""F-CohFTs from a semisimple flat F-manifold, evaluated at correlator level.

A correlator is the integral of an F-CohFT class against a psi monomial:

    < e^{a0} psi^{d0} ; e_{a1} psi^{d1}, ..., e_{an} psi^{dn} >_g .

For the theory ``Psi^{-1} R^{-1}(-z) . c^{w,G0}`` all classes are evaluated in
the idempotent frame.  A stable rooted tree contributes

* at every vertex of color k the F-TFT value times the translation
  ``T(z) = z (w - R(-z) w)`` pushed forward from forgotten points,
* on leg 1 the series ``Psi^{-1} R^{-1}(psi)``,
* on the other legs ``R(-psi) Psi``,
* on every edge ``(Id - R(-x) R^{-1}(y)) / (x + y)``,

weighted by 1/|Aut|.  ``CorrelatorEngine`` sums over all trees at once by a
recursion over rooted subtrees; ``tree_sum`` walks the explicit list from
``enumerate_trees`` and is kept as an independent route.

The coefficient ring is generic: exact rationals at the base point, or
truncated series in the shift parameter tau when the frame is taken at a
formal point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce
from itertools import combinations, combinations_with_replacement
from math import factorial
from typing import Sequence

from gmpy2 import mpq

from . import psikappa
from .ffmanifold import EulerData, VectorPotential, semisimple_frame, structure_constants
from .genus0 import TruncationError, ancestor_family
from .pseries import (
    TruncatedSeries,
    frac_str,
    mat_at_base,
    mat_inverse,
    mat_mul,
    rational,
)
from .rmatrix import rmatrix_homogeneous, rmatrix_sequence


class DivisibilityError(ArithmeticError):
    pass


class HomogeneityPreconditionError(ValueError):
    pass


def _sign(k: int) -> int:
    return -1 if k % 2 else 1


def _nz(x) -> bool:
    if isinstance(x, TruncatedSeries):
        return not x.is_zero()
    return bool(x)


# F-TFTs ------------------------------------------------------------------------


@dataclass(frozen=True)
class FTFTSpec:
    """Diagonal F-TFT in the idempotent frame: unit ``sum w^i e_i`` and genus-one
    datum ``G0``."""

    w: tuple
    G0: tuple

    @property
    def N(self) -> int:
        return len(self.w)

    @classmethod
    def trivial(cls, G0) -> "FTFTSpec":
        return cls(tuple(mpq(1) for _ in G0), tuple(rational(x) for x in G0))


def ftft_value(spec: FTFTSpec, g: int, colors: Sequence[int]):
    """Value on e^{c_0} (x) e_{c_1} (x) ... (x) e_{c_n} (colors 0-based, root first)."""
    n1 = len(colors)
    if 2 * g - 2 + n1 <= 0:
        raise psikappa.UnstableError(f"(g, n+1) = ({g}, {n1}) is unstable")
    k = colors[0]
    if any(c != k for c in colors):
        return mpq(0)
    return spec.G0[k] ** g / spec.w[k] ** (g + n1 - 2)


# stable rooted trees --------------------------------------------------------------


@dataclass(frozen=True)
class StableRootedTree:
    """Vertex 0 carries leg 1; ``parent[v]`` is the root-side neighbour;
    ``legs[k]`` is the vertex of leg k+1."""

    genera: tuple
    parent: tuple
    legs: tuple
    automorphisms: int

    @property
    def genus(self) -> int:
        return sum(self.genera)

    def children(self, v: int) -> list:
        return [u for u, p in enumerate(self.parent) if p == v]

    def valence(self, v: int) -> int:
        return sum(1 for x in self.legs if x == v) + len(self.children(v)) + (1 if v else 0)

    def edges(self) -> list:
        return [(p, u) for u, p in enumerate(self.parent) if p >= 0]

    def is_stable(self) -> bool:
        return all(2 * h - 2 + self.valence(v) > 0 for v, h in enumerate(self.genera))


def _partitions(n: int, smallest: int = 1):
    if n == 0:
        yield ()
        return
    for k in range(smallest, n + 1):
        for rest in _partitions(n - k, k):
            yield (k,) + rest


def _multiplicity_factor(parts) -> int:
    out = 1
    for p in set(parts):
        out *= factorial(parts.count(p))
    return out


def _forests(legs: tuple, G: int):
    """Ways to split the legs and genus G among children: yields
    (blocks with legs, genera of legless children)."""
    if not legs:
        for parts in _partitions(G):
            yield (), parts
        return
    first, rest = legs[0], legs[1:]
    for r in range(len(rest) + 1):
        for extra in combinations(rest, r):
            block = (first,) + extra
            remaining = tuple(x for x in rest if x not in extra)
            for hb in range(G + 1):
                for blocks, parts in _forests(remaining, G - hb):
                    yield ((hb, block),) + blocks, parts


_SHAPES: dict = {}


def _shapes(h_total: int, legs: tuple) -> list:
    """Canonical nested forms (genus, legs, children) of rooted subtrees whose
    top vertex has one extra special point."""
    key = (h_total, legs)
    if key in _SHAPES:
        return _SHAPES[key]
    out = []
    for h in range(h_total + 1):
        for r in range(len(legs) + 1):
            for own in combinations(legs, r):
                rest = tuple(x for x in legs if x not in own)
                for blocks, parts in _forests(rest, h_total - h):
                    nchild = len(blocks) + len(parts)
                    if 2 * h - 1 + len(own) + nchild <= 0:
                        continue
                    # every option is a tuple of child shapes
                    options = [[(x,) for x in _shapes(hb, b)] for hb, b in blocks]
                    for p in sorted(set(parts)):
                        options.append(list(combinations_with_replacement(_shapes(p, ()), parts.count(p))))
                    for combo in _product(options):
                        kids = tuple(sorted(x for group in combo for x in group))
                        out.append((h, own, kids))
    out = sorted(set(out))
    _SHAPES[key] = out
    return out


def _product(lists):
    if not lists:
        yield ()
        return
    for x in lists[0]:
        for rest in _product(lists[1:]):
            yield (x,) + rest


def _aut(shape) -> int:
    h, own, kids = shape
    out = 1
    for k in set(kids):
        if not _legs_of(k):
            out *= factorial(kids.count(k))
    for k in kids:
        out *= _aut(k)
    return out


def _legs_of(shape) -> tuple:
    h, own, kids = shape
    return own + tuple(x for k in kids for x in _legs_of(k))


def enumerate_trees(g: int, n_plus_1: int) -> list[StableRootedTree]:
    """All stable rooted trees of genus g with legs 1..n+1, leg 1 at the root."""
    if 2 * g - 2 + n_plus_1 <= 0:
        raise psikappa.UnstableError(f"(g, n+1) = ({g}, {n_plus_1}) is unstable")
    out = []
    for shape in _shapes(g, tuple(range(2, n_plus_1 + 1))):
        genera, parent, legs = [], [], [0] * n_plus_1

        def walk(s, p):
            v = len(genera)
            genera.append(s[0])
            parent.append(p)
            for x in s[1]:
                legs[x - 1] = v
            for k in s[2]:
                walk(k, v)

        walk(shape, -1)
        out.append(StableRootedTree(tuple(genera), tuple(parent), tuple(legs), _aut(shape)))
    return out


# action data ---------------------------------------------------------------------


@dataclass
class ActionData:
    """Idempotent-frame data of ``Psi^{-1} R^{-1}(-z) . c^{w,G0}``.

    ``R[k]`` are the coefficients of the R-matrix of the flat F-manifold
    (R[0] = Id), ``psi`` maps flat to idempotent components, ``w`` is the
    unit in the idempotent frame and ``G0`` the genus-one datum.  Entries are
    ring elements (rationals or tau-series); ``zero`` and ``one`` fix the ring.
    """

    psi: tuple
    R: list
    w: tuple
    G0: tuple
    zero: object
    one: object
    notes: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.w)

    @property
    def K(self) -> int:
        return len(self.R) - 1


def _lift_matrix(m, one):
    return tuple(tuple(one * rational(x) if not isinstance(x, TruncatedSeries) else x for x in row) for row in m)


@dataclass
class Pipeline:
    """Frame and R-matrix of a vector potential, reused by every action."""

    potential: VectorPotential
    frame: object
    rmatrix: object
    euler: EulerData | None

    def at_base(self, G0, K: int | None = None) -> ActionData:
        K = self.rmatrix.K if K is None else K
        if K > self.rmatrix.K:
            raise TruncationError(f"R-matrix known to z-order {self.rmatrix.K}, need {K}")
        R = [mat_at_base(c) for c in self.rmatrix.coeffs[: K + 1]]
        psi = self.frame.psi_at_base()
        w = self.frame.H_at_base()
        h_inv = tuple(mpq(1) / h for h in w)
        G0 = tuple(rational(x) * hi for x, hi in zip(G0, h_inv))
        return ActionData(psi, R, w, G0, mpq(0), mpq(1), ["base point"])

    def at_formal_point(self, G0, order: int, K: int | None = None) -> ActionData:
        """Data at base + tau as series in tau truncated at ``order``; the
        genus-one datum becomes ``H^{-1}(tau) G0``."""
        K = self.rmatrix.K if K is None else K
        if K > self.rmatrix.K:
            raise TruncationError(f"R-matrix known to z-order {self.rmatrix.K}, need {K}")
        for k in range(K + 1):
            if self.rmatrix.order(k) < order:
                raise TruncationError(
                    f"R_{k} is known to tau-order {self.rmatrix.order(k)}, need {order}; raise the potential degree"
                )

        def cut(x):
            return x.truncate(order).with_max_degree(order)

        R = [tuple(tuple(cut(x) for x in row) for row in c) for c in self.rmatrix.coeffs[: K + 1]]
        psi = tuple(tuple(cut(x) for x in row) for row in self.frame.psi)
        H = tuple(cut(h) for h in self.frame.H)
        one = H[0].constant_like(1)
        G0 = tuple(cut(one * rational(x) * h.invert()) for x, h in zip(G0, H))
        return ActionData(psi, R, H, G0, one.zero_like(), one, [f"formal point, tau-order {order}"])


def pipeline(F: VectorPotential, euler: EulerData | None, K: int, diag_constants=None) -> Pipeline:
    """Frame at the base point of F and an R-matrix to z-order K (homogeneous
    gauge when Euler data is given, free gauge otherwise)."""
    frame = semisimple_frame(F, euler)
    if euler is not None and diag_constants is None:
        R = rmatrix_homogeneous(frame, K)
    else:
        R = rmatrix_sequence(frame, K, diag_constants)
    return Pipeline(F, frame, R, euler)


# the engine ----------------------------------------------------------------------


def _mat_series_inverse(R: list, zero, one) -> list:
    """Coefficients of R(z)^{-1} for R(z) = Id + sum R_k z^k."""
    n = len(R[0])
    K = len(R) - 1
    inv = [tuple(tuple(one if i == j else zero for j in range(n)) for i in range(n))]
    for k in range(1, K + 1):
        acc = [[zero] * n for _ in range(n)]
        for j in range(1, k + 1):
            prod = mat_mul(R[j], inv[k - j], zero)
            acc = [[a - b for a, b in zip(ra, rb)] for ra, rb in zip(acc, prod)]
        inv.append(tuple(tuple(row) for row in acc))
    return inv


def edge_series(R: list, zero, one, degree: int) -> dict:
    """{(p, q): matrix} with (Id - R(-x) R^{-1}(y)) = (x + y) sum ET_{pq} x^p y^q,
    through total degree ``degree`` of the quotient.  The numerator is checked
    to lie in the ideal generated by x + y."""
    Rinv = _mat_series_inverse(R, zero, one)
    top = degree + 1
    if top > len(R) - 1:
        raise TruncationError(f"edge term to degree {degree} needs R to z-order {top}")
    num = {}
    for i in range(top + 1):
        for j in range(top + 1 - i):
            if i == 0 and j == 0:
                continue
            m = mat_mul(R[i], Rinv[j], zero)
            s = _sign(i)
            num[(i, j)] = tuple(tuple(-s * x for x in row) for row in m)
    Q = {}
    for s in range(1, top + 1):
        # num_{i, s-i} = Q_{i-1, s-i} + Q_{i, s-i-1}
        Q[(s - 1, 0)] = num[(s, 0)]
        for i in range(s - 1, 0, -1):
            j = s - i
            Q[(i - 1, j)] = tuple(
                tuple(a - b for a, b in zip(ra, rb)) for ra, rb in zip(num[(i, j)], Q[(i, j - 1)])
            )
        rem = tuple(tuple(a - b for a, b in zip(ra, rb)) for ra, rb in zip(num[(0, s)], Q[(0, s - 1)]))
        if any(_nz(x) for row in rem for x in row):
            raise DivisibilityError(f"edge numerator is not divisible by x + y in degree {s}")
    return Q


class CorrelatorEngine:
    """Correlators of ``Psi^{-1} R^{-1}(-z) . c^{w,G0}`` over the ring of ``data``."""

    def __init__(self, data: ActionData):
        self.data = data
        n, K = data.N, data.K
        zero, one = data.zero, data.one
        self.zero = zero
        R = [_lift_matrix(c, one) for c in data.R]
        psi = _lift_matrix(data.psi, one)
        psi_inv = mat_inverse(psi)
        Rinv = _mat_series_inverse(R, zero, one)
        self._R = R
        self._leg = [mat_mul(R[j], psi, zero) for j in range(K + 1)]  # R_j Psi
        self._root = [mat_mul(psi_inv, Rinv[j], zero) for j in range(K + 1)]  # Psi^{-1} R^{-1}_j
        self._edge = edge_series(R, zero, one, K - 1) if K >= 1 else {}
        w = tuple(one * rational(x) if not isinstance(x, TruncatedSeries) else x for x in data.w)
        self._w = w
        self._w_inv = tuple(one / x for x in w)
        self._G0 = tuple(one * rational(x) if not isinstance(x, TruncatedSeries) else x for x in data.G0)
        # T(z) = z (w - R(-z) w): coefficient of z^b is (-1)^b (R_{b-1} w)
        self._T = []
        for c in range(n):
            row = {}
            for b in range(2, K + 2):
                val = zero
                for j in range(n):
                    val = val + R[b - 1][c][j] * w[j]
                if _nz(val):
                    row[b] = val * _sign(b)
            self._T.append(row)
        self._W: dict = {}
        self._sub: dict = {}
        self._E: dict = {}

    # vertex weights --------------------------------------------------------------

    def vertex_weight(self, c: int, h: int, exps: tuple):
        """Integral over the genus-h space with len(exps) points of the vertex
        class of color c against prod psi^{exps}."""
        key = (c, h, exps)
        if key in self._W:
            return self._W[key]
        n_v = len(exps)
        dim = 3 * h - 3 + n_v
        free = dim - sum(exps)
        total = self.zero
        if free >= 0:
            T = self._T[c]
            base = self._G0[c] ** h if h else None
            for bs in _forgotten(free, sorted(T)):
                coef = mpq(1, _multiplicity_factor(list(bs)))
                val = psikappa.vertex_integral(h, exps, bs) if bs else psikappa.psi_integral(h, exps)
                if not val:
                    continue
                term = reduce(lambda acc, b: acc * T[b], bs, self.data.one) * (coef * val)
                # F-TFT c^{w,G0} on h, n_v + m points: G0^h / w^(h + n_v + m - 2)
                term = term * self._w_inv[c] ** (h + n_v + len(bs) - 2)
                if base is not None:
                    term = term * base
                total = total + term
        self._W[key] = total
        return total

    # subtree sums ----------------------------------------------------------------

    def _leg_poly(self, c: int, ins: tuple) -> dict:
        alpha, a = ins
        out = {}
        for j in range(self.data.K + 1):
            x = self._leg[j][c][alpha]
            if _nz(x):
                out[j + a] = x * _sign(j)
        return out

    def _edge_poly(self, h: int, legs: tuple, c: int) -> dict:
        """psi-polynomial at the parent end of an edge, color c there, summed
        over all subtrees below."""
        key = (h, legs)
        if key not in self._E:
            sub = self.subtree(h, legs)
            n = self.data.N
            table = []
            for cp in range(n):
                poly = {}
                for (p, q), m in self._edge.items():
                    acc = self.zero
                    for cc in range(n):
                        x = sub[cc].get(q)
                        if x is not None and _nz(m[cp][cc]):
                            acc = acc + m[cp][cc] * x
                    if _nz(acc):
                        poly[p] = poly.get(p, self.zero) + acc
                table.append(poly)
            self._E[key] = table
        return self._E[key][c]

    def subtree(self, h_total: int, legs: tuple) -> list:
        """[color][d] -> sum over rooted subtrees of genus h_total carrying the
        insertions ``legs`` (sorted), with psi^d at the top point."""
        key = (h_total, legs)
        if key in self._sub:
            return self._sub[key]
        n = self.data.N
        out = [dict() for _ in range(n)]
        idx = tuple(range(len(legs)))
        for h in range(h_total + 1):
            for r in range(len(idx) + 1):
                for own in combinations(idx, r):
                    rest = tuple(i for i in idx if i not in own)
                    for blocks, parts in _forests(rest, h_total - h):
                        nchild = len(blocks) + len(parts)
                        if 2 * h - 1 + len(own) + nchild <= 0:
                            continue
                        weight = mpq(1, _multiplicity_factor(list(parts)))
                        child_keys = [(hb, tuple(sorted(legs[i] for i in b))) for hb, b in blocks]
                        child_keys += [(p, ()) for p in parts]
                        for c in range(n):
                            polys = [self._leg_poly(c, legs[i]) for i in own]
                            polys += [self._edge_poly(hb, ck, c) for hb, ck in child_keys]
                            self._accumulate(out[c], c, h, polys, weight)
        self._sub[key] = out
        return out

    def _accumulate(self, target: dict, c: int, h: int, polys: list, weight) -> None:
        n_v = len(polys) + 1
        dim = 3 * h - 3 + n_v
        state = {(): self.data.one * weight}
        for poly in polys:
            nxt = {}
            for ms, v in state.items():
                used = sum(ms)
                for e, x in poly.items():
                    if used + e > dim:
                        continue
                    k = tuple(sorted(ms + (e,)))
                    val = v * x
                    nxt[k] = nxt[k] + val if k in nxt else val
            state = nxt
            if not state:
                return
        for ms, v in state.items():
            for d in range(dim - sum(ms) + 1):
                wgt = self.vertex_weight(c, h, tuple(sorted(ms + (d,))))
                if _nz(wgt):
                    contrib = v * wgt
                    target[d] = target[d] + contrib if d in target else contrib

    # correlators -----------------------------------------------------------------

    def correlator(self, g: int, root: tuple, insertions: Sequence[tuple]):
        """Integral of the class on e^{root[0]} (x) e_{alpha_1} (x) ... against
        psi_1^{root[1]} prod psi_{i+1}^{a_i}; indices are 0-based."""
        ins = tuple(sorted((int(a), int(b)) for a, b in insertions))
        n1 = len(ins) + 1
        if 2 * g - 2 + n1 <= 0:
            raise psikappa.UnstableError(f"(g, n+1) = ({g}, {n1}) is unstable")
        dim = 3 * g - 3 + n1
        if root[1] + sum(a for _, a in ins) > dim:
            return self.zero
        if dim > self.data.K:
            raise TruncationError(f"dimension {dim} needs R to z-order {dim}, have {self.data.K}")
        sub = self.subtree(g, ins)
        alpha0, a0 = root
        total = self.zero
        for c in range(self.data.N):
            for d, x in sub[c].items():
                j = d - a0
                if 0 <= j <= self.data.K:
                    coef = self._root[j][alpha0][c]
                    if _nz(coef):
                        total = total + coef * x
        return total


def _forgotten(free: int, allowed: list):
    """Nondecreasing tuples b of allowed exponents (all >= 2) with sum(b_j - 1) = free."""

    def rec(rem, start):
        if rem == 0:
            yield ()
            return
        for i in range(start, len(allowed)):
            b = allowed[i]
            if b - 1 > rem:
                break
            for rest in rec(rem - (b - 1), i):
                yield (b,) + rest

    yield from rec(free, 0)


def tree_sum(engine: CorrelatorEngine, g: int, root: tuple, insertions: Sequence[tuple]):
    """The same correlator as ``engine.correlator``, summed tree by tree over
    ``enumerate_trees`` with explicit 1/|Aut| weights (insertion i sits on leg i+2)."""
    ins = tuple((int(a), int(b)) for a, b in insertions)
    n1 = len(ins) + 1
    dim = 3 * g - 3 + n1
    if root[1] + sum(a for _, a in ins) > dim:
        return engine.zero
    n = engine.data.N
    total = engine.zero
    for tree in enumerate_trees(g, n1):

        def value(v):
            kids = tree.children(v)
            kid_vals = [value(u) for u in kids]
            out = [dict() for _ in range(n)]
            for c in range(n):
                polys = [engine._leg_poly(c, ins[k - 1]) for k, x in enumerate(tree.legs) if x == v and k > 0]
                for sub in kid_vals:
                    poly = {}
                    for (p, q), m in engine._edge.items():
                        for cc in range(n):
                            x = sub[cc].get(q)
                            if x is not None and _nz(m[c][cc]):
                                poly[p] = poly.get(p, engine.zero) + m[c][cc] * x
                    polys.append(poly)
                engine._accumulate(out[c], c, tree.genera[v], polys, mpq(1))
            return out

        top = value(0)
        part = engine.zero
        for c in range(n):
            for d, x in top[c].items():
                j = d - root[1]
                if 0 <= j <= engine.data.K and _nz(engine._root[j][root[0]][c]):
                    part = part + engine._root[j][root[0]][c] * x
        total = total + part * mpq(1, tree.automorphisms)
    return total


# tables ---------------------------------------------------------------------------


def correlator_keys(g: int, n: int, N: int, max_level: int | None = None, root_levels=None):
    """Sorted (root, insertions) keys within the dimension bound of the
    genus-g space with n+1 points."""
    dim = 3 * g - 2 + n
    top = dim if max_level is None else max_level
    slots = [(b, l) for l in range(top + 1) for b in range(N)]
    roots = [(a, l) for l in (range(dim + 1) if root_levels is None else root_levels) for a in range(N)]
    out = []
    for ins in combinations_with_replacement(slots, n):
        used = sum(l for _, l in ins)
        for r in roots:
            if used + r[1] <= dim:
                out.append((r, tuple(sorted(ins))))
    return sorted(out)


@dataclass
class CorrelatorTable:
    """(g, root, insertions) -> value; indices 0-based internally, 1-based in export."""

    entries: dict
    meta: dict = field(default_factory=dict)

    def export(self) -> str:
        lines = [json.dumps(self.meta, sort_keys=True)]
        for (g, root, ins) in sorted(self.entries):
            val = self.entries[(g, root, ins)]
            lines.append(
                json.dumps(
                    {
                        "g": g,
                        "root": [root[0] + 1, root[1]],
                        "insertions": [[a + 1, b] for a, b in ins],
                        "value": _value_str(val),
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> "CorrelatorTable":
        rows = [json.loads(x) for x in text.splitlines() if x.strip()]
        entries = {}
        for r in rows[1:]:
            key = (r["g"], (r["root"][0] - 1, r["root"][1]), tuple((a - 1, b) for a, b in r["insertions"]))
            v = r["value"]
            entries[key] = TruncatedSeries.from_dict(v) if isinstance(v, dict) else rational(v)
        return cls(entries, rows[0])

    def format(self) -> str:
        rows = []
        for (g, root, ins) in sorted(self.entries):
            val = self.entries[(g, root, ins)]
            text = val.format() if isinstance(val, TruncatedSeries) else frac_str(val)
            ins_s = " ".join(f"e{a + 1}psi^{b}" for a, b in ins)
            rows.append((str(g), f"e^{root[0] + 1}psi^{root[1]}", ins_s, text))
        widths = [max([len(r[i]) for r in rows] + [1]) for i in range(3)]
        return "\n".join(
            f"{r[0]:>{widths[0]}}  {r[1]:<{widths[1]}}  {r[2]:<{widths[2]}}  {r[3]}" for r in rows
        ) + ("\n" if rows else "")


def _value_str(val):
    if isinstance(val, TruncatedSeries):
        return val.to_dict()
    return frac_str(val)


def correlator_table(engine: CorrelatorEngine, genera, n_max: int, max_level: int | None = None) -> CorrelatorTable:
    entries = {}
    N = engine.data.N
    for g in genera:
        for n in range(n_max + 1):
            if 2 * g - 1 + n <= 0:
                continue
            for root, ins in correlator_keys(g, n, N, max_level):
                entries[(g, root, ins)] = engine.correlator(g, root, ins)
    return CorrelatorTable(entries, {"genera": list(genera), "n_max": n_max, "notes": list(engine.data.notes)})


def givental_correlator(F: VectorPotential, G0, g: int, root: tuple, insertions, euler: EulerData | None = None):
    """One correlator of ``c^{F,G0}`` at the base point of F."""
    dim = 3 * g - 2 + len(insertions)
    P = pipeline(F, euler, max(dim, 1))
    return CorrelatorEngine(P.at_base(G0)).correlator(g, root, insertions)


# genus-0 comparison ------------------------------------------------------------------


def _multiset_factor(ins) -> int:
    out = 1
    for s in set(ins):
        out *= factorial(list(ins).count(s))
    return out


def genus0_consistency(F: VectorPotential, engine: CorrelatorEngine, n_max: int, max_level: int) -> list:
    """Keys where a genus-0 correlator differs from the matching ancestor
    potential coefficient times the symmetry factor of its insertions."""
    fam = ancestor_family(F, max_level, n_max, max_level)
    bad = []
    for n in range(2, n_max + 1):
        for root, ins in correlator_keys(0, n, F.N, max_level, root_levels=range(max_level + 1)):
            x = engine.correlator(0, root, ins)
            y = fam.coefficient(root[0], root[1], ins) * _multiset_factor(ins)
            if x != y:
                bad.append((root, ins))
    return bad


# formal shift --------------------------------------------------------------------------


class FormalShift:
    """tau-expansion of the correlators of the shifted theory, built from base
    correlators with extra psi-free insertions.

    Derivatives in tau pull back the psi classes along the forgetful map; the
    correction terms live on divisors where a marked point bubbles off with
    the new point, which contributes the structure constants at tau.
    """

    def __init__(self, engine: CorrelatorEngine, F: VectorPotential):
        self.engine = engine
        self.N = F.N
        self.c = structure_constants(F)
        self._D: dict = {}
        self.like = F.potentials[0]

    def _dc(self, mu, a, b, T) -> mpq:
        """d_T c^mu_{ab} at the base point."""
        exps = [0] * self.N
        for x in T:
            exps[x] += 1
        val = self.c[mu][a][b].coefficient(exps)
        return val * _multiset_factor(T)

    def derivative(self, g: int, S: tuple, root: tuple, ins: tuple):
        """d_{S} (ordered directions) of the correlator at tau = 0."""
        ins = tuple(sorted(ins))
        key = (g, tuple(sorted(S)), root, ins)
        if key in self._D:
            return self._D[key]
        if not S:
            val = self.engine.correlator(g, root, ins)
        else:
            beta, rest = S[0], S[1:]
            val = self.derivative(g, rest, root, ins + ((beta, 0),))
            idx = range(len(rest))
            for r in range(len(rest) + 1):
                for T_pos in combinations(idx, r):
                    T = tuple(rest[i] for i in T_pos)
                    left = tuple(rest[i] for i in idx if i not in T_pos)
                    for i, (alpha, a) in enumerate(ins):
                        if a == 0:
                            continue
                        for mu in range(self.N):
                            k = self._dc(mu, alpha, beta, T)
                            if k:
                                new = ins[:i] + ((mu, a - 1),) + ins[i + 1 :]
                                val = val - k * self.derivative(g, left, root, new)
                    if root[1]:
                        for mu in range(self.N):
                            k = self._dc(root[0], beta, mu, T)
                            if k:
                                val = val - k * self.derivative(g, left, (mu, root[1] - 1), ins)
        self._D[key] = val
        return val

    def series(self, g: int, root: tuple, ins, order: int) -> TruncatedSeries:
        """The correlator of the shifted theory as a series in tau."""
        out = {}
        for m in range(order + 1):
            for S in combinations_with_replacement(range(self.N), m):
                exps = [0] * self.N
                for x in S:
                    exps[x] += 1
                v = self.derivative(g, S, root, tuple(ins)) / _multiset_factor(S)
                if v:
                    out[tuple(exps)] = v
        return TruncatedSeries(self.N, out, max_degree=order, base_point=self.like.base_point)


def formal_shift_table(shift: FormalShift, genera, n_max: int, order: int, max_level=None) -> CorrelatorTable:
    entries = {}
    for g in genera:
        for n in range(n_max + 1):
            if 2 * g - 1 + n <= 0:
                continue
            for root, ins in correlator_keys(g, n, shift.N, max_level):
                entries[(g, root, ins)] = shift.series(g, root, ins, order)
    return CorrelatorTable(entries, {"genera": list(genera), "n_max": n_max, "tau_order": order, "route": "formal shift"})


def compare_tables(a: CorrelatorTable, b: CorrelatorTable, order: int | None = None) -> list:
    """Keys (present in both) whose values differ, optionally up to tau-order."""
    bad = []
    for key in sorted(set(a.entries) & set(b.entries)):
        x, y = a.entries[key], b.entries[key]
        if order is not None and isinstance(x, TruncatedSeries):
            if not (x - y).truncate(order).is_zero():
                bad.append(key)
        elif x != y:
            bad.append(key)
    return bad


# homogeneity --------------------------------------------------------------------------


def conformal_dimension(delta: Sequence, G0: Sequence):
    """-2 delta_l when the nonzero components of G0 (idempotent frame) share
    delta_l; raises otherwise."""
    ds = sorted({rational(delta[i]) for i, x in enumerate(G0) if rational(x)})
    if len(ds) > 1:
        comps = [i + 1 for i, x in enumerate(G0) if rational(x)]
        raise HomogeneityPreconditionError(
            f"G0 is not in a single eigenspace: components {comps} have delta values {[frac_str(d) for d in ds]}"
        )
    return -2 * ds[0] if ds else mpq(0)


def homogeneity_residuals(table: CorrelatorTable, euler: EulerData, gamma, order: int) -> list:
    """Keys where (3g-2+n - a_0 - sum a_i + E(tau).d_tau) C
    - (sum q_{a_i} - q_{a_0} + gamma g) C is nonzero through tau-order ``order``."""
    bad = []
    gamma = rational(gamma)
    for (g, root, ins), C in sorted(table.entries.items()):
        n = len(ins)
        deg = 3 * g - 2 + n - root[1] - sum(a for _, a in ins)
        weight = sum(euler.q[a] for a, _ in ins) - euler.q[root[0]] + gamma * g
        E = euler.components(C)
        lhs = C.scale(deg)
        for beta in range(C.nvars):
            lhs = lhs + E[beta] * C.partial(beta)
        res = (lhs - C.scale(weight)).truncate(order)
        if not res.is_zero():
            bad.append((g, root, ins))
    return bad


# degree-zero part ------------------------------------------------------------------------


def degree_zero_part(psi0, G0) -> tuple:
    """Degree-zero part of the genus-one one-point class: Psi^{-1}(0) G0."""
    inv = mat_inverse(tuple(tuple(rational(x) for x in row) for row in psi0))
    return tuple(sum((inv[a][j] * rational(G0[j]) for j in range(len(G0))), mpq(0)) for a in range(len(G0)))


def unit_defects(engine: CorrelatorEngine, unit: Sequence, genera, n_max: int) -> list:
    """Keys violating the string relation for a psi-free unit insertion."""
    bad = []
    N = engine.data.N
    for g in genera:
        for n in range(n_max + 1):
            if 2 * g - 1 + n <= 0:
                continue
            for root, ins in correlator_keys(g, n, N):
                lhs = engine.zero
                for b in range(N):
                    if rational(unit[b]):
                        lhs = lhs + engine.correlator(g, root, ins + ((b, 0),)) * rational(unit[b])
                rhs = engine.zero
                if root[1]:
                    rhs = rhs + engine.correlator(g, (root[0], root[1] - 1), ins)
                for i, (a, l) in enumerate(ins):
                    if l:
                        rhs = rhs + engine.correlator(g, root, ins[:i] + ((a, l - 1),) + ins[i + 1 :])
                if lhs != rhs:
                    bad.append((g, root, ins))
    # c_{0,3}(e^alpha, e_beta, unit) = delta^alpha_beta
    for alpha in range(N):
        for beta in range(N):
            val = engine.zero
            for b in range(N):
                if rational(unit[b]):
                    val = val + engine.correlator(0, (alpha, 0), ((beta, 0), (b, 0))) * rational(unit[b])
            if val != (1 if alpha == beta else 0):
                bad.append((0, (alpha, 0), ((beta, 0),)))
    return bad
