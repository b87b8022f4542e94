"""Truncated multivariate power series and matrix-valued z-series.

Coefficients are exact rationals (``gmpy2.mpq``).  Any other commutative ring
element that supports ``+``, ``-``, ``*`` and a truth value (for instance
:class:`Jet`) may be used as a coefficient as well; the hot loops never
inspect the coefficient type.

A series is stored in the shifted variables ``x = t - base_point`` as a map
from packed exponent keys to coefficients.  Each variable occupies ``BITS``
bits of a Python integer, so multiplying two monomials is one integer
addition.  Optional integer weights replace the total degree by a weighted
degree; the truncation order always refers to that (weighted) degree.
"""

from __future__ import annotations

import json
from fractions import Fraction
from functools import lru_cache
from math import comb
from typing import Iterable, Mapping, Sequence

from gmpy2 import mpq

MPQ = type(mpq(0))
BITS = 16
MASK = (1 << BITS) - 1

_EXACT_TYPES = (int, Fraction, str, MPQ)


class SeriesStructureError(ValueError):
    """Operands live in different rings (dimension, base point or weights)."""


class NotInvertibleError(ArithmeticError):
    pass


class NotInGroupError(ArithmeticError):
    pass


class NotClosedError(ArithmeticError):
    """A one-form handed to :func:`integrate_closed_form` is not closed."""


def rational(x):
    """Convert an exact number (int, Fraction, mpq or ``"p/q"`` string) to mpq.

    Values of other types are assumed to be ring elements and returned as is.
    Floats are rejected.
    """
    if isinstance(x, MPQ):
        return x
    if isinstance(x, bool):
        return mpq(int(x))
    if isinstance(x, int):
        return mpq(x)
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    if isinstance(x, str):
        return mpq(x.strip())
    if isinstance(x, float):
        raise TypeError("floating point coefficients are not accepted; use a fraction string")
    return x


def frac_str(x) -> str:
    """Canonical text for an exact rational."""
    x = rational(x)
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


def pack(exps: Sequence[int]) -> int:
    key = 0
    for i, e in enumerate(exps):
        if e < 0 or e > MASK:
            raise ValueError(f"exponent {e} out of range")
        key |= e << (BITS * i)
    return key


@lru_cache(maxsize=None)
def unpack(key: int, n: int) -> tuple[int, ...]:
    return tuple((key >> (BITS * i)) & MASK for i in range(n))


@lru_cache(maxsize=None)
def _key_degree(key: int, n: int, weights) -> int:
    exps = unpack(key, n)
    if weights is None:
        return sum(exps)
    return sum(w * e for w, e in zip(weights, exps))


def unit_key(i: int) -> int:
    return 1 << (BITS * i)


class TruncatedSeries:
    """A power series in ``nvars`` shifted variables, known up to ``max_degree``.

    Values are immutable.  Binary operations require equal dimension, base
    point and weights, and truncate to the smaller of the two orders.
    ``partial`` keeps the order (it acts on the stored polynomial); callers
    that need an honest order after differentiating must truncate explicitly.
    """

    __slots__ = ("nvars", "base_point", "max_degree", "weights", "_c", "_graded")

    def __init__(
        self,
        nvars: int,
        coefficients: Mapping[Sequence[int], object] | None = None,
        *,
        max_degree: int,
        base_point: Sequence | None = None,
        weights: Sequence[int] | None = None,
    ):
        if max_degree < 0:
            raise ValueError("max_degree must be nonnegative")
        self.nvars = nvars
        self.max_degree = max_degree
        self.base_point = (
            tuple(rational(b) for b in base_point) if base_point is not None else (mpq(0),) * nvars
        )
        if len(self.base_point) != nvars:
            raise SeriesStructureError("base point has wrong length")
        if weights is not None:
            weights = tuple(int(w) for w in weights)
            if len(weights) != nvars or any(w < 0 for w in weights):
                raise SeriesStructureError("weights must be nonnegative, one per variable")
            if all(w == 1 for w in weights):
                weights = None
        self.weights = weights
        c = {}
        for exps, val in (coefficients or {}).items():
            exps = tuple(exps)
            if len(exps) != nvars:
                raise SeriesStructureError(f"exponent {exps} has wrong length")
            val = rational(val)
            key = pack(exps)
            if not val or _key_degree(key, nvars, weights) > max_degree:
                continue
            c[key] = c.get(key, 0) + val
            if not c[key]:
                del c[key]
        self._c = c
        self._graded = None

    # construction helpers -------------------------------------------------

    @classmethod
    def _raw(cls, nvars, base_point, max_degree, weights, packed):
        obj = cls.__new__(cls)
        obj.nvars = nvars
        obj.base_point = base_point
        obj.max_degree = max_degree
        obj.weights = weights
        obj._c = packed
        obj._graded = None
        return obj

    def _like(self, packed, max_degree=None):
        return TruncatedSeries._raw(
            self.nvars,
            self.base_point,
            self.max_degree if max_degree is None else max_degree,
            self.weights,
            packed,
        )

    def zero_like(self, max_degree=None):
        return self._like({}, max_degree)

    def constant_like(self, value, max_degree=None):
        value = rational(value)
        return self._like({0: value} if value else {}, max_degree)

    def variable_like(self, i: int):
        return self._like({unit_key(i): mpq(1)})

    @classmethod
    def zero(cls, nvars, max_degree, base_point=None, weights=None):
        return cls(nvars, {}, max_degree=max_degree, base_point=base_point, weights=weights)

    @classmethod
    def constant(cls, value, nvars, max_degree, base_point=None, weights=None):
        return cls(
            nvars, {(0,) * nvars: value}, max_degree=max_degree, base_point=base_point, weights=weights
        )

    @classmethod
    def variable(cls, i, nvars, max_degree, base_point=None, weights=None):
        exps = [0] * nvars
        exps[i] = 1
        return cls(nvars, {tuple(exps): 1}, max_degree=max_degree, base_point=base_point, weights=weights)

    # inspection -----------------------------------------------------------

    def degree_of_key(self, key: int) -> int:
        return _key_degree(key, self.nvars, self.weights)

    def degree_of(self, exps: Sequence[int]) -> int:
        return self.degree_of_key(pack(exps))

    @property
    def coefficients(self) -> dict[tuple[int, ...], object]:
        return {unpack(k, self.nvars): v for k, v in self._c.items()}

    def items(self):
        """Terms sorted by degree, then exponent vector."""
        n = self.nvars
        return sorted(
            ((unpack(k, n), v) for k, v in self._c.items()),
            key=lambda kv: (self.degree_of(kv[0]), kv[0]),
        )

    def packed_items(self):
        return self._c.items()

    def coefficient(self, exps: Sequence[int]):
        return self._c.get(pack(exps), mpq(0))

    def constant_term(self):
        return self._c.get(0, mpq(0))

    def __len__(self):
        return len(self._c)

    def is_zero(self) -> bool:
        return not self._c

    def min_degree(self):
        if not self._c:
            return None
        return min(self.degree_of_key(k) for k in self._c)

    def graded(self):
        """Terms bucketed by degree: list indexed by degree of [(key, coef)]."""
        if self._graded is None:
            buckets = [[] for _ in range(self.max_degree + 1)]
            for k, v in self._c.items():
                buckets[self.degree_of_key(k)].append((k, v))
            self._graded = buckets
        return self._graded

    def uses_variable(self, i: int) -> bool:
        sh = BITS * i
        return any((k >> sh) & MASK for k in self._c)

    # compatibility --------------------------------------------------------

    def _check(self, other: "TruncatedSeries"):
        if self.nvars != other.nvars:
            raise SeriesStructureError(f"dimension mismatch: {self.nvars} vs {other.nvars}")
        if self.base_point != other.base_point:
            raise SeriesStructureError("base point mismatch")
        if self.weights != other.weights:
            raise SeriesStructureError("weight mismatch")

    # ring operations ------------------------------------------------------

    def _add(self, other, sign):
        if isinstance(other, TruncatedSeries):
            self._check(other)
            d = min(self.max_degree, other.max_degree)
            if d == self.max_degree:
                out = dict(self._c)
            else:
                out = {k: v for k, v in self._c.items() if self.degree_of_key(k) <= d}
            limit = d < other.max_degree
            for k, v in other._c.items():
                if limit and self.degree_of_key(k) > d:
                    continue
                s = out.get(k, 0) + v if sign > 0 else out.get(k, 0) - v
                if s:
                    out[k] = s
                else:
                    out.pop(k, None)
            return self._like(out, d)
        other = rational(other)
        out = dict(self._c)
        s = out.get(0, 0) + other if sign > 0 else out.get(0, 0) - other
        if s:
            out[0] = s
        else:
            out.pop(0, None)
        return self._like(out)

    def __add__(self, other):
        return self._add(other, 1)

    __radd__ = __add__

    def __sub__(self, other):
        return self._add(other, -1)

    def __rsub__(self, other):
        return (-self)._add(other, 1)

    def __neg__(self):
        return self._like({k: -v for k, v in self._c.items()})

    def __pos__(self):
        return self

    def scale(self, s):
        s = rational(s)
        if not s:
            return self._like({})
        out = {}
        for k, v in self._c.items():
            w = v * s
            if w:
                out[k] = w
        return self._like(out)

    def __mul__(self, other):
        if not isinstance(other, TruncatedSeries):
            return self.scale(other)
        self._check(other)
        d = min(self.max_degree, other.max_degree)
        a, b = self, other
        if len(a._c) > len(b._c):
            a, b = b, a
        if not a._c or not b._c:
            return self._like({}, d)
        ga = a.graded()
        gb = b.graded()
        out = {}
        get = out.get
        for da in range(min(d, a.max_degree) + 1):
            ta = ga[da]
            if not ta:
                continue
            for db in range(min(d - da, b.max_degree) + 1):
                tb = gb[db]
                if not tb:
                    continue
                for ka, ca in ta:
                    for kb, cb in tb:
                        k = ka + kb
                        out[k] = get(k, 0) + ca * cb
        return self._like({k: v for k, v in out.items() if v}, d)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, TruncatedSeries):
            return self * other.invert()
        other = rational(other)
        return self.scale(mpq(1) / other)

    def __rtruediv__(self, other):
        return self.invert().scale(other)

    def __pow__(self, n: int):
        if n < 0:
            return self.invert() ** (-n)
        result = self.constant_like(1)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def __eq__(self, other):
        if isinstance(other, TruncatedSeries):
            return (
                self.nvars == other.nvars
                and self.base_point == other.base_point
                and self.max_degree == other.max_degree
                and self.weights == other.weights
                and self._c == other._c
            )
        if isinstance(other, _EXACT_TYPES):
            other = rational(other)
            return self._c == ({0: other} if other else {})
        return NotImplemented

    __hash__ = None

    def equal_up_to(self, other: "TruncatedSeries", degree: int) -> bool:
        return (self - other).truncate(degree).is_zero()

    def __bool__(self):
        return bool(self._c)

    # calculus -------------------------------------------------------------

    def partial(self, i: int) -> "TruncatedSeries":
        sh = BITS * i
        u = 1 << sh
        out = {}
        for k, v in self._c.items():
            e = (k >> sh) & MASK
            if e:
                out[k - u] = v * e
        return self._like(out)

    def truncate(self, degree: int) -> "TruncatedSeries":
        d = min(degree, self.max_degree)
        if d < 0:
            raise ValueError("cannot truncate below degree 0")
        return self._like({k: v for k, v in self._c.items() if self.degree_of_key(k) <= d}, d)

    def with_max_degree(self, degree: int) -> "TruncatedSeries":
        """Relabel the order; dropping terms if it decreases.  Raising the order
        asserts that the stored terms are exact up to the new order."""
        if degree <= self.max_degree:
            return self.truncate(degree)
        return self._like(dict(self._c), degree)

    def restrict_zero(self, indices: Iterable[int]) -> "TruncatedSeries":
        """Set the listed variables to zero (value at the base point in them)."""
        mask = 0
        for i in indices:
            mask |= MASK << (BITS * i)
        return self._like({k: v for k, v in self._c.items() if not k & mask})

    def invert(self) -> "TruncatedSeries":
        c0 = self.constant_term()
        if not c0:
            raise NotInvertibleError("non-invertible at base point")
        if self.weights is not None and 0 in self.weights:
            if any(self.degree_of_key(k) == 0 for k in self._c if k):
                raise NotInvertibleError("inversion with weight-zero variables is not supported")
        inv0 = mpq(1) / c0 if isinstance(c0, MPQ) else 1 / c0
        x = self.scale(inv0) - 1
        if x.is_zero():
            return self.constant_like(inv0)
        result = self.constant_like(1)
        for _ in range(self.max_degree):
            result = 1 - x * result
        return result.scale(inv0)

    def exp(self) -> "TruncatedSeries":
        if self.constant_term():
            raise ValueError("exp needs a series with zero constant term")
        result = self.constant_like(1)
        for n in range(self.max_degree, 0, -1):
            result = 1 + (self * result).scale(mpq(1, n))
        return result

    def log(self) -> "TruncatedSeries":
        if self.constant_term() != 1:
            raise ValueError("log needs constant term 1")
        x = self - 1
        result = self.zero_like()
        power = self.constant_like(1)
        for n in range(1, self.max_degree + 1):
            power = power * x
            result = result + power.scale(mpq((-1) ** (n + 1), n))
        return result

    # change of variables --------------------------------------------------

    def rebase(self, new_base: Sequence) -> "TruncatedSeries":
        """Re-expand the stored polynomial around ``new_base``."""
        if self.weights is not None:
            raise SeriesStructureError("rebase of weighted series is not supported")
        new_base = tuple(rational(b) for b in new_base)
        if len(new_base) != self.nvars:
            raise SeriesStructureError("base point has wrong length")
        shift = [nb - ob for nb, ob in zip(new_base, self.base_point)]
        n, d = self.nvars, self.max_degree
        powers = []
        for s in shift:
            row = [mpq(1)]
            for _ in range(d):
                row.append(row[-1] * s)
            powers.append(row)
        out = {}
        for k, v in self._c.items():
            exps = unpack(k, n)
            partial_terms = [(0, 0, v)]
            for i, e in enumerate(exps):
                if not e:
                    continue
                nxt = []
                for key, deg, c in partial_terms:
                    for j in range(e + 1):
                        if deg + j > d:
                            break
                        f = powers[i][e - j]
                        if not f:
                            continue
                        nxt.append((key + (j << (BITS * i)), deg + j, c * comb(e, j) * f))
                partial_terms = nxt
            for key, _, c in partial_terms:
                out[key] = out.get(key, 0) + c
        res = TruncatedSeries._raw(n, new_base, d, None, {k: v for k, v in out.items() if v})
        return res

    def compose(self, subs: Sequence["TruncatedSeries"], cache: dict | None = None) -> "TruncatedSeries":
        """Substitute series for the variables (stored terms read as a polynomial).

        Exact as a series substitution when every substitute for a variable of
        positive weight has no terms of weight below that variable's weight.
        ``cache`` may be shared across calls that use the same substitutes.
        """
        if len(subs) != self.nvars:
            raise SeriesStructureError("need one substitute per variable")
        ref = subs[0]
        for s in subs[1:]:
            ref._check(s)
        d = min(min(s.max_degree for s in subs), self.max_degree)
        if cache is None:
            cache = {}
        n = self.nvars
        one = ref.constant_like(1, d)

        def power(key):
            if key == 0:
                return one
            hit = cache.get(key)
            if hit is not None and hit.max_degree >= d:
                return hit if hit.max_degree == d else hit.truncate(d)
            exps = unpack(key, n)
            i = next(j for j, e in enumerate(exps) if e)
            val = (power(key - unit_key(i)) * subs[i]).truncate(d)
            cache[key] = val
            return val

        out = {}
        for k, v in self._c.items():
            for kk, vv in power(k)._c.items():
                out[kk] = out.get(kk, 0) + v * vv
        return ref._like({k: v for k, v in out.items() if v}, d)

    def reindex(
        self,
        nvars: int,
        mapping: Sequence[int],
        *,
        base_point: Sequence | None = None,
        weights: Sequence[int] | None = None,
        max_degree: int | None = None,
    ) -> "TruncatedSeries":
        """Embed into a ring with ``nvars`` variables, old variable i -> new mapping[i]."""
        out = {}
        for k, v in self._c.items():
            exps = unpack(k, self.nvars)
            key = 0
            for i, e in enumerate(exps):
                if e:
                    key += e << (BITS * mapping[i])
            out[key] = out.get(key, 0) + v
        res = TruncatedSeries._raw(
            nvars,
            tuple(rational(b) for b in base_point) if base_point is not None else (mpq(0),) * nvars,
            self.max_degree if max_degree is None else max_degree,
            tuple(weights) if weights is not None and any(w != 1 for w in weights) else None,
            {k: v for k, v in out.items() if v},
        )
        if max_degree is not None:
            res = res._like({k: v for k, v in res._c.items() if res.degree_of_key(k) <= max_degree})
        return res

    def map_coefficients(self, f) -> "TruncatedSeries":
        out = {}
        for k, v in self._c.items():
            w = f(v)
            if w:
                out[k] = w
        return self._like(out)

    def evaluate(self, point: Sequence) -> object:
        """Value of the stored polynomial at a point given in shifted variables."""
        point = [rational(p) for p in point]
        total = mpq(0)
        for exps, v in self.coefficients.items():
            term = v
            for p, e in zip(point, exps):
                if e:
                    term = term * p**e
            total = total + term
        return total

    def max_abs_coefficient(self):
        vals = [abs(v) for v in self._c.values() if isinstance(v, MPQ)]
        return max(vals) if vals else mpq(0)

    # text -----------------------------------------------------------------

    def __repr__(self):
        return f"TruncatedSeries({self.format()})"

    def format(self, names: Sequence[str] | None = None) -> str:
        n = self.nvars
        if names is None:
            names = [f"x{i + 1}" for i in range(n)] if n > 1 else ["x"]
        parts = []
        for exps, v in self.items():
            mono = "*".join(
                names[i] if e == 1 else f"{names[i]}^{e}" for i, e in enumerate(exps) if e
            )
            coef = frac_str(v) if isinstance(v, MPQ) else f"({v})"
            if not mono:
                parts.append(coef)
            elif coef == "1":
                parts.append(mono)
            elif coef == "-1":
                parts.append("-" + mono)
            else:
                parts.append(f"{coef}*{mono}")
        body = " + ".join(parts).replace("+ -", "- ") if parts else "0"
        return f"{body} + O({self.max_degree + 1})"

    def to_dict(self) -> dict:
        terms = []
        for exps, v in self.items():
            v = rational(v)
            terms.append(
                {"exponents": list(exps), "numerator": int(v.numerator), "denominator": int(v.denominator)}
            )
        head = {
            "num_vars": self.nvars,
            "base_point": [frac_str(b) for b in self.base_point],
            "max_degree": self.max_degree,
        }
        if self.weights is not None:
            head["weights"] = list(self.weights)
        return {"header": head, "terms": terms}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TruncatedSeries":
        head = data["header"]
        coeffs = {}
        for t in data["terms"]:
            coeffs[tuple(t["exponents"])] = mpq(int(t["numerator"]), int(t["denominator"]))
        return cls(
            head["num_vars"],
            coeffs,
            max_degree=head["max_degree"],
            base_point=head["base_point"],
            weights=head.get("weights"),
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "TruncatedSeries":
        return cls.from_dict(json.loads(text))


def integrate_closed_form(
    components: Sequence[TruncatedSeries], constant=0, check: bool = True
) -> TruncatedSeries:
    """Potential f with df = sum_a components[a] dx^a and f(base) = constant.

    The order of the result is one more than the smallest order of the
    components.  With ``check`` the closedness condition is verified
    coefficient-wise first and :class:`NotClosedError` is raised on failure.
    """
    n = len(components)
    ref = components[0]
    for c in components[1:]:
        ref._check(c)
    if ref.nvars != n:
        raise SeriesStructureError("need one component per variable")
    if ref.weights is not None:
        raise SeriesStructureError("weighted integration is not supported")
    d = min(c.max_degree for c in components)
    if check:
        for a in range(n):
            for b in range(a + 1, n):
                diff = (components[a].partial(b) - components[b].partial(a)).truncate(max(d - 1, 0))
                if not diff.is_zero():
                    exps, val = diff.items()[0]
                    raise NotClosedError(f"form not closed: d_{b}w_{a} - d_{a}w_{b} has {val} at {exps}")
    out = {}
    for a, comp in enumerate(components):
        u = unit_key(a)
        for k, v in comp._c.items():
            if ref.degree_of_key(k) > d:
                continue
            deg = ref.degree_of_key(k) + 1
            kk = k + u
            out[kk] = out.get(kk, 0) + v * mpq(1, deg)
    constant = rational(constant)
    if constant:
        out[0] = out.get(0, 0) + constant
    return ref._like({k: v for k, v in out.items() if v}, d + 1)


class Jet:
    """A first-order jet ``value + sum_i eps_i * tangent[i]`` with ``eps_i eps_j = 0``.

    Used as a coefficient ring to differentiate whole pipelines along formal
    parameters.
    """

    __slots__ = ("value", "tangent")

    def __init__(self, value, tangent: Sequence):
        self.value = rational(value)
        self.tangent = tuple(rational(t) for t in tangent)

    @classmethod
    def _lift(cls, other, m):
        if isinstance(other, Jet):
            return other
        return cls(other, (mpq(0),) * m)

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.value + other.value, tuple(a + b for a, b in zip(self.tangent, other.tangent)))
        return Jet(self.value + rational(other), self.tangent)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.value, tuple(-a for a in self.tangent))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(
                self.value * other.value,
                tuple(self.value * b + a * other.value for a, b in zip(self.tangent, other.tangent)),
            )
        if isinstance(other, TruncatedSeries):
            return NotImplemented
        other = rational(other)
        return Jet(self.value * other, tuple(a * other for a in self.tangent))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            if not other.value:
                raise ZeroDivisionError("jet with zero value")
            inv = mpq(1) / other.value
            return self * Jet(inv, tuple(-b * inv * inv for b in other.tangent))
        return self * (mpq(1) / rational(other))

    def __rtruediv__(self, other):
        return Jet._lift(other, len(self.tangent)) / self

    def __pow__(self, n):
        result = Jet(1, (0,) * len(self.tangent))
        for _ in range(n):
            result = result * self
        return result

    def __bool__(self):
        return bool(self.value) or any(self.tangent)

    def __eq__(self, other):
        if isinstance(other, Jet):
            return self.value == other.value and self.tangent == other.tangent
        if isinstance(other, _EXACT_TYPES):
            return self.value == rational(other) and not any(self.tangent)
        return NotImplemented

    __hash__ = None

    def __repr__(self):
        return f"Jet({frac_str(self.value)}, [{', '.join(frac_str(t) for t in self.tangent)}])"


# matrices over a commutative ring ---------------------------------------------


def _is_unit(x) -> bool:
    if isinstance(x, TruncatedSeries):
        return bool(x.constant_term())
    if isinstance(x, Jet):
        return bool(x.value)
    return bool(x)


def _inverse_scalar(x):
    if isinstance(x, TruncatedSeries):
        return x.invert()
    if isinstance(x, Jet):
        return mpq(1) / x
    return mpq(1) / rational(x)


def mat_identity(n: int, one=1):
    return tuple(tuple(rational(one) if i == j else mpq(0) for j in range(n)) for i in range(n))


def mat_zero(n: int, m: int | None = None):
    return tuple(tuple(mpq(0) for _ in range(n if m is None else m)) for _ in range(n))


def as_matrix(rows) -> tuple:
    return tuple(tuple(rational(x) for x in row) for row in rows)


def mat_mul(a, b, zero=None):
    """Matrix product; ``zero`` is the start value of each entry sum (pass a
    zero series to get series entries even where every product vanishes)."""
    n, m, p = len(a), len(b), len(b[0])
    start = mpq(0) if zero is None else zero
    out = []
    for i in range(n):
        row = []
        ai = a[i]
        for j in range(p):
            s = start
            for k in range(m):
                x, y = ai[k], b[k][j]
                if _nonzero(x) and _nonzero(y):
                    s = x * y + s
            row.append(s)
        out.append(tuple(row))
    return tuple(out)


def _nonzero(x) -> bool:
    if isinstance(x, TruncatedSeries):
        return not x.is_zero()
    return bool(x)


def mat_add(a, b):
    return tuple(tuple(x + y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def mat_sub(a, b):
    return tuple(tuple(x - y for x, y in zip(ra, rb)) for ra, rb in zip(a, b))


def mat_scale(a, s):
    return tuple(tuple(x * s for x in row) for row in a)


def mat_neg(a):
    return tuple(tuple(-x for x in row) for row in a)


def mat_transpose(a):
    return tuple(zip(*a))


def mat_vec(a, v, zero=None):
    start = mpq(0) if zero is None else zero
    out = []
    for row in a:
        s = start
        for x, y in zip(row, v):
            if _nonzero(x) and _nonzero(y):
                s = x * y + s
        out.append(s)
    return tuple(out)


def vec_mat(v, a, zero=None):
    return mat_vec(mat_transpose(a), v, zero)


def mat_map(a, f):
    return tuple(tuple(f(x) for x in row) for row in a)


def mat_is_zero(a) -> bool:
    return not any(_nonzero(x) for row in a for x in row)


def mat_inverse(a):
    """Gauss-Jordan inverse; pivots must be units (nonzero at the base point)."""
    n = len(a)
    work = [list(row) + [mpq(1) if i == j else mpq(0) for j in range(n)] for i, row in enumerate(a)]
    for col in range(n):
        piv = next((r for r in range(col, n) if _is_unit(work[r][col])), None)
        if piv is None:
            raise NotInvertibleError("singular matrix")
        work[col], work[piv] = work[piv], work[col]
        inv = _inverse_scalar(work[col][col])
        work[col] = [x * inv for x in work[col]]
        for r in range(n):
            if r != col and _nonzero(work[r][col]):
                f = work[r][col]
                work[r] = [x - f * y for x, y in zip(work[r], work[col])]
    return tuple(tuple(row[n:]) for row in work)


def solve_linear(a, b):
    """Solve a x = b for a square rational system (exact)."""
    inv = mat_inverse(a)
    return mat_vec(inv, b)


def mat_at_base(a):
    return mat_map(a, lambda x: x.constant_term() if isinstance(x, TruncatedSeries) else x)


def mat_equal(a, b) -> bool:
    return mat_is_zero(mat_sub(a, b))


class MatrixZSeries:
    """``sum_{k=0}^{K} C_k z^k`` with N x N matrix coefficients, truncated at z-order K."""

    __slots__ = ("size", "z_order", "coeffs")

    def __init__(self, coeffs: Sequence, z_order: int | None = None):
        coeffs = [tuple(tuple(rational(x) for x in row) for row in c) for c in coeffs]
        if not coeffs:
            raise ValueError("need at least the constant coefficient")
        self.size = len(coeffs[0])
        k = len(coeffs) - 1 if z_order is None else z_order
        while len(coeffs) <= k:
            coeffs.append(mat_zero(self.size))
        self.z_order = k
        self.coeffs = tuple(coeffs[: k + 1])

    @classmethod
    def identity(cls, n: int, z_order: int):
        return cls([mat_identity(n)], z_order)

    def coefficient(self, k: int):
        if k > self.z_order:
            raise IndexError("beyond z-order")
        return self.coeffs[k]

    def __mul__(self, other):
        if not isinstance(other, MatrixZSeries):
            return MatrixZSeries([mat_scale(c, other) for c in self.coeffs], self.z_order)
        if self.size != other.size:
            raise SeriesStructureError("matrix size mismatch")
        k = min(self.z_order, other.z_order)
        out = []
        for m in range(k + 1):
            acc = mat_zero(self.size)
            for i in range(m + 1):
                if mat_is_zero(self.coeffs[i]) or mat_is_zero(other.coeffs[m - i]):
                    continue
                acc = mat_add(acc, mat_mul(self.coeffs[i], other.coeffs[m - i]))
            out.append(acc)
        return MatrixZSeries(out, k)

    def __add__(self, other):
        k = min(self.z_order, other.z_order)
        return MatrixZSeries([mat_add(a, b) for a, b in zip(self.coeffs[: k + 1], other.coeffs)], k)

    def __sub__(self, other):
        k = min(self.z_order, other.z_order)
        return MatrixZSeries([mat_sub(a, b) for a, b in zip(self.coeffs[: k + 1], other.coeffs)], k)

    def inverse(self) -> "MatrixZSeries":
        try:
            c0inv = mat_inverse(self.coeffs[0])
        except NotInvertibleError:
            raise NotInGroupError("not in group: leading coefficient is singular") from None
        n, k = self.size, self.z_order
        # X = C0^{-1} A - Id is divisible by z; A^{-1} = (Id + X)^{-1} C0^{-1}
        normalized = [mat_mul(c0inv, c) for c in self.coeffs]
        x = MatrixZSeries([mat_zero(n)] + normalized[1:], k)
        result = MatrixZSeries.identity(n, k)
        for _ in range(k):
            result = MatrixZSeries.identity(n, k) - x * result
        return result * MatrixZSeries([c0inv], k)

    def transpose(self) -> "MatrixZSeries":
        return MatrixZSeries([mat_transpose(c) for c in self.coeffs], self.z_order)

    def negate_z(self) -> "MatrixZSeries":
        """The series with z replaced by -z."""
        return MatrixZSeries(
            [c if k % 2 == 0 else mat_neg(c) for k, c in enumerate(self.coeffs)], self.z_order
        )

    def at_base(self) -> "MatrixZSeries":
        return MatrixZSeries([mat_at_base(c) for c in self.coeffs], self.z_order)

    def map_entries(self, f) -> "MatrixZSeries":
        return MatrixZSeries([mat_map(c, f) for c in self.coeffs], self.z_order)

    def truncate(self, k: int) -> "MatrixZSeries":
        return MatrixZSeries(list(self.coeffs[: k + 1]), min(k, self.z_order))

    def conjugate(self, left, right) -> "MatrixZSeries":
        return MatrixZSeries([mat_mul(mat_mul(left, c), right) for c in self.coeffs], self.z_order)

    def is_identity(self) -> bool:
        return mat_equal(self.coeffs[0], mat_identity(self.size)) and all(
            mat_is_zero(c) for c in self.coeffs[1:]
        )

    def __eq__(self, other):
        if not isinstance(other, MatrixZSeries):
            return NotImplemented
        return (
            self.size == other.size
            and self.z_order == other.z_order
            and all(mat_equal(a, b) for a, b in zip(self.coeffs, other.coeffs))
        )

    __hash__ = None

    def __repr__(self):
        return f"MatrixZSeries(size={self.size}, z_order={self.z_order})"
