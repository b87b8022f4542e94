"""Intersection numbers of psi classes on moduli of stable curves.

``psi_integral(g, a)`` is the integral of prod psi_i^{a_i} over the genus-g
space with len(a) marked points, computed by the Virasoro (DVV) recursion.
``vertex_integral`` adds forgotten points: the integral of
prod psi_i^{a_i} . pi_{m*}(prod psi^{b_j}) with all b_j >= 2.  It is
evaluated by pushing forward one marked point at a time; an independent
evaluation through kappa classes is provided for cross-checks.
"""

from __future__ import annotations

import json
import threading
from functools import lru_cache
from itertools import permutations

from gmpy2 import mpq

from .pseries import frac_str, rational


class UnstableError(ValueError):
    pass


def _stable(g: int, n: int) -> bool:
    return 2 * g - 2 + n > 0


def _dfact(k: int) -> int:
    """k!! for odd k >= -1."""
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


_lock = threading.Lock()


_PSI: dict = {}


def _psi(g: int, a: tuple) -> mpq:
    key = (g, a)
    val = _PSI.get(key)
    if val is None:
        val = _PSI[key] = _psi_raw(g, a)
    return val


def _psi_raw(g: int, a: tuple) -> mpq:
    n = len(a)
    if sum(a) != 3 * g - 3 + n:
        return mpq(0)
    if g == 0 and n == 3:
        return mpq(1)
    if g == 1 and n == 1:
        return mpq(1, 24)
    if 0 in a:
        # string equation
        i = a.index(0)
        rest = a[:i] + a[i + 1 :]
        total = mpq(0)
        for j, x in enumerate(rest):
            if x:
                total += _psi(g, tuple(sorted(rest[:j] + (x - 1,) + rest[j + 1 :])))
        return total
    if 1 in a:
        i = a.index(1)
        rest = a[:i] + a[i + 1 :]
        return (2 * g - 2 + len(rest)) * _psi(g, rest)
    # DVV on the largest exponent
    k = a[-1] - 1
    rest = a[:-1]
    total = mpq(0)
    for j, d in enumerate(rest):
        others = rest[:j] + rest[j + 1 :]
        coef = mpq(_dfact(2 * k + 2 * d + 1), _dfact(2 * d - 1))
        total += coef * _psi(g, tuple(sorted(others + (d + k,))))
    for r in range(k):
        s = k - 1 - r
        w = mpq(_dfact(2 * r + 1) * _dfact(2 * s + 1), 2)
        if g >= 1:
            total += w * _psi(g - 1, tuple(sorted(rest + (r, s))))
        m = len(rest)
        for mask in range(1 << m):
            left = tuple(rest[i] for i in range(m) if mask >> i & 1)
            right = tuple(rest[i] for i in range(m) if not mask >> i & 1)
            for g1 in range(g + 1):
                g2 = g - g1
                if not (_stable(g1, len(left) + 1) and _stable(g2, len(right) + 1)):
                    continue
                l_val = _psi(g1, tuple(sorted(left + (r,))))
                if not l_val:
                    continue
                total += w * l_val * _psi(g2, tuple(sorted(right + (s,))))
    return total / _dfact(2 * k + 3)


def psi_integral(g: int, a) -> mpq:
    a = tuple(sorted(int(x) for x in a))
    if g < 0 or any(x < 0 for x in a):
        raise ValueError("genus and exponents must be nonnegative")
    if not _stable(g, len(a)):
        raise UnstableError(f"(g, n) = ({g}, {len(a)}) is unstable")
    with _lock:
        return _psi(g, a)


# forgotten points -----------------------------------------------------------------


@lru_cache(maxsize=None)
def _vertex(g: int, a: tuple, b: tuple) -> mpq:
    n, m = len(a), len(b)
    if sum(a) + sum(b) - m != 3 * g - 3 + n:
        return mpq(0)
    if m == 0:
        return _psi(g, a)
    if 1 in b:
        # a forgotten point carrying psi^1 contributes the dilaton factor
        i = b.index(1)
        rest = b[:i] + b[i + 1 :]
        return (2 * g - 2 + n + len(rest)) * _vertex(g, a, rest)
    if n == 0 or not _stable(g, n - 1):
        return _psi(g, tuple(sorted(a + b)))
    last, a_rest = a[-1], a[:-1]
    if last == 0:
        total = mpq(0)
        for i, x in enumerate(a_rest):
            if x:
                total += _vertex(g, tuple(sorted(a_rest[:i] + (x - 1,) + a_rest[i + 1 :])), b)
        for i, y in enumerate(b):
            total += _vertex(g, a_rest, tuple(sorted(b[:i] + (y - 1,) + b[i + 1 :])))
        return total
    if last == 1:
        return (2 * g + n + m - 3) * _vertex(g, a_rest, b)
    return _vertex(g, a_rest, tuple(sorted(b + (last,))))


def vertex_integral(g: int, a, b) -> mpq:
    """Integral of prod psi^{a} times the pushforward of prod psi^{b} along the
    map forgetting len(b) points; needs every b_j >= 2."""
    a = tuple(sorted(int(x) for x in a))
    b = tuple(sorted(int(x) for x in b))
    if any(x < 2 for x in b):
        raise ValueError("forgotten-point exponents must be >= 2")
    if not _stable(g, len(a)):
        raise UnstableError(f"(g, n) = ({g}, {len(a)}) is unstable")
    with _lock:
        return _vertex(g, a, b)


# kappa classes ---------------------------------------------------------------


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]


def _cycles(perm):
    seen = set()
    out = []
    for i in range(len(perm)):
        if i in seen:
            continue
        cyc = []
        j = i
        while j not in seen:
            seen.add(j)
            cyc.append(j)
            j = perm[j]
        out.append(cyc)
    return out


def kappa_integral(g: int, a, e) -> mpq:
    """Integral of prod psi^{a} prod kappa_{e_j} (kappa_e = pi_*(psi^{e+1})),
    as a signed sum over set partitions of the kappa factors."""
    a = tuple(int(x) for x in a)
    e = list(int(x) for x in e)
    total = mpq(0)
    for part in _set_partitions(list(range(len(e)))):
        # inverse of the permutation expansion: each block weighs (-1)^(|B|-1)
        sign = -1 if (len(e) - len(part)) % 2 else 1
        extra = tuple(1 + sum(e[j] for j in block) for block in part)
        total += sign * psi_integral(g, a + extra)
    return total


def vertex_integral_kappa(g: int, a, b) -> mpq:
    """Same value as :func:`vertex_integral`, via the pushforward of psi
    monomials into kappa polynomials (a sum over permutations)."""
    a = tuple(int(x) for x in a)
    b = tuple(int(x) for x in b)
    if any(x < 2 for x in b):
        raise ValueError("forgotten-point exponents must be >= 2")
    if not b:
        return psi_integral(g, a)
    total = mpq(0)
    for perm in permutations(range(len(b))):
        es = tuple(sum(b[j] - 1 for j in cyc) for cyc in _cycles(perm))
        total += kappa_integral(g, a, es)
    return total


# cache dump/load ----------------------------------------------------------------


def dump_cache() -> str:
    """JSON lines of every memoised nonzero psi integral, sorted by key."""
    with _lock:
        items = sorted((k, v) for k, v in _PSI.items() if v)
    rows = [json.dumps({"g": g, "a": list(a), "value": frac_str(v)}, sort_keys=True) for (g, a), v in items]
    return "".join(r + "\n" for r in rows)


def load_cache(text: str) -> int:
    """Seed the memo from a dump; returns the number of entries read."""
    count = 0
    with _lock:
        for line in text.splitlines():
            if line.strip():
                r = json.loads(line)
                _PSI[(int(r["g"]), tuple(sorted(r["a"])))] = rational(r["value"])
                count += 1
    return count


def clear_cache() -> None:
    with _lock:
        _PSI.clear()
        _vertex.cache_clear()
