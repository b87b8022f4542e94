"""R-matrices of a semisimple flat F-manifold.

The sequence ``R(z) = Id + sum_k R_k z^k`` solves

    z (dR + R [Gamma, dU]) = [R, dU]

in canonical coordinates.  Entries are series in the shifted flat variables
of the frame; derivatives along ``d/du^k`` go through the frame's Jacobian.
Each order of the recursion costs one degree of truncation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from gmpy2 import mpq

from .ffmanifold import SemisimpleFrame, _norm
from .pseries import (
    MatrixZSeries,
    NotClosedError,
    TruncatedSeries,
    frac_str,
    integrate_closed_form,
    mat_at_base,
    mat_inverse,
    mat_mul,
    rational,
)


class MissingEulerDataError(ValueError):
    pass


@dataclass
class RMatrixSequence:
    """``coeffs[k]`` is R_k as an N x N tuple of series; ``coeffs[0]`` is Id."""

    coeffs: list
    gauge: str
    diag_constants: tuple | None = None
    notes: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.coeffs) - 1

    @property
    def N(self) -> int:
        return len(self.coeffs[0])

    def order(self, k: int) -> int:
        """Truncation degree of the entries of R_k."""
        return min(x.max_degree for row in self.coeffs[k] for x in row)

    def at_base(self) -> MatrixZSeries:
        return MatrixZSeries([mat_at_base(c) for c in self.coeffs], self.K)

    def as_zseries(self) -> MatrixZSeries:
        return MatrixZSeries(list(self.coeffs), self.K)

    def entry(self, k: int, i: int, j: int) -> TruncatedSeries:
        return self.coeffs[k][i][j]

    def truncated(self, K: int) -> "RMatrixSequence":
        return RMatrixSequence(list(self.coeffs[: K + 1]), self.gauge, self.diag_constants, list(self.notes))


def _identity(frame: SemisimpleFrame):
    zero = frame.gamma[0][0].zero_like()
    n = frame.N
    return tuple(tuple(zero + 1 if i == j else zero for j in range(n)) for i in range(n))


def _off_diagonal(frame: SemisimpleFrame, prev) -> list[list]:
    n = frame.N
    gam = frame.gamma
    nxt = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                nxt[i][j] = prev[i][i] * gam[i][j] - frame.d_du(prev[i][j], i)
    return nxt


def _diagonal_form(frame: SemisimpleFrame, nxt, i: int) -> list[TruncatedSeries]:
    """Components, in canonical coordinates, of the closed form d(R_{m+1})^i_i."""
    n = frame.N
    gam = frame.gamma
    comps = []
    for k in range(n):
        if k != i:
            comps.append(nxt[i][k] * gam[k][i])
        else:
            s = gam[0][0].zero_like()
            for j in range(n):
                if j != i:
                    s = s - nxt[i][j] * gam[j][i]
            comps.append(s)
    return comps


def _to_flat_form(frame: SemisimpleFrame, comps: Sequence[TruncatedSeries]) -> list[TruncatedSeries]:
    # d/dt^a = sum_k (du^k/dt^a) d/du^k
    n = frame.N
    Pt = frame.psi_tilde
    out = []
    for a in range(n):
        s = comps[0].zero_like()
        for k in range(n):
            s = s + comps[k] * Pt[k][a]
        out.append(s)
    return out


def rmatrix_sequence(frame: SemisimpleFrame, K: int, diag_constants=None) -> RMatrixSequence:
    """Free-gauge sequence: ``diag_constants[k-1][i]`` is the value of
    (R_k)^i_i at the base point (default 0)."""
    n = frame.N
    consts = []
    for k in range(K):
        row = None if diag_constants is None or k >= len(diag_constants) else diag_constants[k]
        consts.append(tuple(rational(row[i]) if row is not None else mpq(0) for i in range(n)))
    coeffs = [_identity(frame)]
    for m in range(K):
        nxt = _off_diagonal(frame, coeffs[-1])
        for i in range(n):
            form = _to_flat_form(frame, _diagonal_form(frame, nxt, i))
            try:
                nxt[i][i] = integrate_closed_form(form, consts[m][i])
            except NotClosedError as exc:
                raise NotClosedError(f"diagonal form of R_{m + 1} entry {i + 1} is not closed: {exc}") from None
        coeffs.append(tuple(tuple(row) for row in nxt))
    return RMatrixSequence(coeffs, "free", tuple(consts))


def rmatrix_homogeneous(frame: SemisimpleFrame, K: int) -> RMatrixSequence:
    if frame.delta is None:
        raise MissingEulerDataError("homogeneous R-matrix needs Euler data on the frame")
    n = frame.N
    u = frame.u
    gam = frame.gamma
    coeffs = [_identity(frame)]
    for m in range(K):
        nxt = _off_diagonal(frame, coeffs[-1])
        for i in range(n):
            s = gam[0][0].zero_like()
            for j in range(n):
                if j != i:
                    s = s + (u[j] - u[i]) * nxt[i][j] * gam[j][i]
            nxt[i][i] = s.scale(mpq(-1, m + 1))
        coeffs.append(tuple(tuple(row) for row in nxt))
    return RMatrixSequence(coeffs, "homogeneous")


@dataclass
class RMatrixReport:
    residuals: tuple  # per z-order k = 1..K
    homogeneity: tuple | None = None

    @property
    def ok(self) -> bool:
        vals = list(self.residuals) + list(self.homogeneity or ())
        return all(v == 0 for v in vals)


def rmatrix_verify(R: RMatrixSequence, frame: SemisimpleFrame, *, homogeneity: bool | None = None) -> RMatrixReport:
    """Residual norms of dR_{k-1} + R_{k-1}[Gamma, dU] = [R_k, dU] for k = 1..K.

    Each residual is compared at the order the data actually determines.
    With ``homogeneity`` (default: when the sequence is homogeneous) the
    Euler-scaling residual of every entry is reported as well.
    """
    n = R.N
    gam = frame.gamma
    res = []
    for k in range(1, R.K + 1):
        prev, cur = R.coeffs[k - 1], R.coeffs[k]
        vals = []
        for s in range(n):
            for i in range(n):
                for j in range(n):
                    lhs = frame.d_du(prev[i][j], s)
                    # R [Gamma, E_ss]: (R Gamma)_{is} delta_{sj} - R_{is} Gamma_{sj}
                    if j == s:
                        for m in range(n):
                            if m != s:
                                lhs = lhs + prev[i][m] * gam[m][s]
                    if s != j:
                        lhs = lhs - prev[i][s] * gam[s][j]
                    rhs = lhs.zero_like()
                    if j == s:
                        rhs = rhs + cur[i][s]
                    if i == s:
                        rhs = rhs - cur[s][j]
                    d = lhs.max_degree
                    vals.append((lhs - rhs).truncate(d))
        res.append(_norm(vals))
    hom = None
    if homogeneity or (homogeneity is None and R.gauge == "homogeneous"):
        if frame.delta is None:
            raise MissingEulerDataError("homogeneity residual needs Euler data")
        delta = frame.delta
        hom_vals = []
        for k in range(1, R.K + 1):
            vals = []
            for i in range(n):
                for j in range(n):
                    x = R.coeffs[k][i][j]
                    r = frame.euler_derivative(x) - x.scale(delta[i] - delta[j] - k)
                    vals.append(r.truncate(max(x.max_degree - 1, 0)))
            hom_vals.append(_norm(vals))
        hom = tuple(hom_vals)
    return RMatrixReport(tuple(res), hom)


def perturbed(R: RMatrixSequence, k: int, i: int, j: int, amount) -> RMatrixSequence:
    coeffs = [tuple(tuple(row) for row in c) for c in R.coeffs]
    rows = [list(row) for row in coeffs[k]]
    rows[i][j] = rows[i][j] + rational(amount)
    coeffs[k] = tuple(tuple(row) for row in rows)
    return RMatrixSequence(coeffs, R.gauge, R.diag_constants, list(R.notes) + [f"perturbed R_{k}[{i},{j}]"])


def gauge_factor(R_new: RMatrixSequence, R_old: RMatrixSequence) -> MatrixZSeries:
    """The left factor ``R_new(z) R_old(z)^{-1}``; for two solutions it is a
    diagonal z-series with constant entries."""
    K = min(R_new.K, R_old.K)
    return R_new.truncated(K).as_zseries() * R_old.truncated(K).as_zseries().inverse()


def is_constant_diagonal(M: MatrixZSeries) -> bool:
    for c in M.coeffs:
        for i, row in enumerate(c):
            for j, x in enumerate(row):
                if not isinstance(x, TruncatedSeries):
                    if i != j and x:
                        return False
                    continue
                if i != j and not x.is_zero():
                    return False
                if i == j and any(sum(e) > 0 for e in x.coefficients):
                    return False
    return True


def apply_gauge(R: RMatrixSequence, diag: Sequence[Sequence]) -> RMatrixSequence:
    """``(Id + sum_k diag(D_k) z^k) R(z)`` truncated at the z-order of R."""
    n = R.N
    factor = [tuple(tuple(mpq(1) if i == j else mpq(0) for j in range(n)) for i in range(n))]
    for k in range(R.K):
        row = diag[k] if k < len(diag) else [0] * n
        factor.append(tuple(tuple(rational(row[i]) if i == j else mpq(0) for j in range(n)) for i in range(n)))
    prod = MatrixZSeries(factor, R.K) * R.as_zseries()
    zero = R.coeffs[0][0][0].zero_like()
    coeffs = [tuple(tuple(x if isinstance(x, TruncatedSeries) else zero + x for x in row) for row in c) for c in prod.coeffs]
    return RMatrixSequence(coeffs, "free", None, ["gauge-transformed"])


def to_flat_frame(R: RMatrixSequence, frame: SemisimpleFrame) -> RMatrixSequence:
    """Conjugate into the flat frame: ``Psi^{-1} R_k Psi``."""
    psi = frame.psi
    psi_inv = mat_inverse(psi)
    zero = psi[0][0].zero_like()
    coeffs = [mat_mul(mat_mul(psi_inv, c, zero), psi, zero) for c in R.coeffs]
    return RMatrixSequence(coeffs, R.gauge, R.diag_constants, list(R.notes) + ["flat frame"])


def export(R: RMatrixSequence) -> str:
    """One JSON record per nonzero entry coefficient, sorted."""
    lines = [json.dumps({"gauge": R.gauge, "K": R.K, "N": R.N}, sort_keys=True)]
    for k, c in enumerate(R.coeffs):
        for i, row in enumerate(c):
            for j, x in enumerate(row):
                lines.append(json.dumps({"k": k, "i": i + 1, "j": j + 1, "series": x.to_dict()}, sort_keys=True))
    return "\n".join(lines) + "\n"


def load(text: str) -> RMatrixSequence:
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    head, body = rows[0], rows[1:]
    n, K = head["N"], head["K"]
    mats = [[[None] * n for _ in range(n)] for _ in range(K + 1)]
    for r in body:
        mats[r["k"]][r["i"] - 1][r["j"] - 1] = TruncatedSeries.from_dict(r["series"])
    return RMatrixSequence([tuple(tuple(row) for row in m) for m in mats], head["gauge"])


def base_values(R: RMatrixSequence) -> list:
    return [tuple(tuple(frac_str(x) for x in row) for row in c) for c in R.at_base().coeffs]
