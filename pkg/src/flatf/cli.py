"""Command-line front end.

Manifold spec files are JSON::

    {
      "format": "flatf-manifold", "version": 1,
      "N": 2,
      "unit": ["1", "0"],
      "potentials": [{"2,0": "1/2"}, {"1,1": "1", "0,3": "-1/6"}],
      "euler": {"q": ["0", "1/2"], "r": ["0", "0"]},
      "base": ["0", "1"],
      "max_degree": 12
    }

Potential keys are comma-separated exponent vectors in the flat coordinates
t^1..t^N; numbers are exact fractions written as strings.  ``euler`` and
``base`` are optional.  Every command prints either aligned text (default)
or one JSON record per line (``--format jsonl``).  With ``--strict`` a
nonzero residual gives exit status 1.

If ``FLATF_CACHE_DIR`` is set, psi intersection numbers are loaded from and
saved to ``$FLATF_CACHE_DIR/psi.jsonl``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from gmpy2 import mpq

from . import fcohft, genus0, psikappa
from .ffmanifold import (
    EulerFieldError,
    VectorPotential,
    canonical_coordinates,
    darboux_checks,
    euler_data,
    semisimple_frame,
    validate_vector_potential,
)
from .pseries import frac_str, rational
from .rmatrix import base_values, rmatrix_homogeneous, rmatrix_sequence, rmatrix_verify

SPEC_FORMAT = "flatf-manifold"
SPEC_VERSION = 1


class SpecError(ValueError):
    pass


# spec files ----------------------------------------------------------------------


def _frac(value, where: str):
    try:
        return rational(value)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise SpecError(f"{where}: cannot read {value!r} as an exact fraction ({exc})") from None


def _vector(raw, n: int, where: str) -> tuple:
    if not isinstance(raw, list) or len(raw) != n:
        raise SpecError(f"{where}: expected a list of {n} fractions")
    return tuple(_frac(x, f"{where}[{i}]") for i, x in enumerate(raw))


def parse_spec(text: str, source: str = "<spec>") -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{source}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise SpecError(f"{source}: top level must be an object")
    if raw.get("format", SPEC_FORMAT) != SPEC_FORMAT:
        raise SpecError(f"{source}: field 'format' must be {SPEC_FORMAT!r}")
    if raw.get("version", SPEC_VERSION) != SPEC_VERSION:
        raise SpecError(f"{source}: unsupported version {raw.get('version')!r}")
    for key in ("N", "unit", "potentials"):
        if key not in raw:
            raise SpecError(f"{source}: missing field {key!r}")
    n = raw["N"]
    if not isinstance(n, int) or n < 1:
        raise SpecError(f"{source}: field 'N' must be a positive integer")
    pots = raw["potentials"]
    if not isinstance(pots, list) or len(pots) != n:
        raise SpecError(f"{source}: field 'potentials' must list {n} polynomials")
    polys = []
    for a, poly in enumerate(pots):
        if not isinstance(poly, dict):
            raise SpecError(f"{source}: potentials[{a}] must map exponent strings to fractions")
        terms = {}
        for key, val in poly.items():
            try:
                exps = tuple(int(x) for x in key.split(","))
            except ValueError:
                raise SpecError(f"{source}: potentials[{a}] key {key!r} is not an exponent list") from None
            if len(exps) != n or any(e < 0 for e in exps):
                raise SpecError(f"{source}: potentials[{a}] key {key!r} needs {n} nonnegative exponents")
            terms[exps] = _frac(val, f"{source}: potentials[{a}][{key!r}]")
        polys.append(terms)
    spec = {
        "name": raw.get("name", Path(source).stem),
        "N": n,
        "unit": _vector(raw["unit"], n, f"{source}: unit"),
        "polys": polys,
        "base": _vector(raw["base"], n, f"{source}: base") if "base" in raw else (mpq(0),) * n,
        "max_degree": int(raw.get("max_degree", 10)),
        "euler": None,
    }
    if "euler" in raw:
        e = raw["euler"]
        if not isinstance(e, dict) or "q" not in e:
            raise SpecError(f"{source}: field 'euler' needs 'q' (and optionally 'r')")
        spec["euler"] = (
            _vector(e["q"], n, f"{source}: euler.q"),
            _vector(e.get("r", ["0"] * n), n, f"{source}: euler.r"),
        )
    return spec


def load_spec(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"{path}: {exc.strerror}") from None
    return parse_spec(text, path)


def build(spec: dict, base=None, degree=None):
    """VectorPotential around the chosen base point, plus Euler data or None."""
    base = spec["base"] if base is None else base
    D = spec["max_degree"] if degree is None else degree
    F = VectorPotential.from_polynomials(spec["polys"], spec["unit"], D, base_point=base)
    E = euler_data(F, *spec["euler"]) if spec["euler"] is not None else None
    return F, E


# output --------------------------------------------------------------------------


class Out:
    def __init__(self, fmt: str, stream=None):
        self.fmt = fmt
        self.stream = stream or sys.stdout
        self.failed = False

    def record(self, kind: str, **fields):
        if self.fmt == "jsonl":
            self.stream.write(json.dumps({"kind": kind, **fields}, sort_keys=True) + "\n")
        else:
            body = "  ".join(f"{k}={_text(v)}" for k, v in sorted(fields.items()))
            self.stream.write(f"{kind:<14}{body}\n")

    def line(self, text: str):
        if self.fmt != "jsonl":
            self.stream.write(text + "\n")

    def check(self, name: str, ok: bool, **fields):
        self.failed |= not ok
        self.record("check", name=name, ok=ok, **fields)


def _text(v):
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_text(x) for x in v) + "]"
    return str(v)


def _mat(m):
    return [[frac_str(x) for x in row] for row in m]


def _series_mat(m):
    return [[x.format() for x in row] for row in m]


def _parse_vector(text: str, where: str):
    try:
        return tuple(rational(x) for x in text.split(","))
    except (ValueError, ZeroDivisionError):
        raise SpecError(f"{where}: expected comma-separated fractions, got {text!r}") from None


def _parse_ints(text: str, where: str):
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise SpecError(f"{where}: expected comma-separated integers, got {text!r}") from None


def _parse_insertions(text: str, N: int):
    """'1:0,2:1' -> ((0, 0), (1, 1)); 1-based flat index : psi power."""
    out = []
    if not text:
        return ()
    for item in text.split(","):
        try:
            a, b = item.split(":")
            a, b = int(a) - 1, int(b)
        except ValueError:
            raise SpecError(f"--insertions: bad item {item!r}, expected alpha:power") from None
        if not 0 <= a < N or b < 0:
            raise SpecError(f"--insertions: item {item!r} out of range")
        out.append((a, b))
    return tuple(sorted(out))


# commands ------------------------------------------------------------------------


def cmd_validate(args, spec, out: Out):
    base = spec["base"] if args.base is None else args.base
    D = spec["max_degree"] if args.degree is None else args.degree
    F = VectorPotential.from_polynomials(spec["polys"], spec["unit"], D, base_point=base)
    rep = validate_vector_potential(F)
    out.check(
        "vector-potential",
        rep.valid,
        unit=frac_str(rep.unit_residual),
        associativity=frac_str(rep.associativity_residual),
        first_violation=rep.first_violation or "-",
    )
    if spec["euler"] is not None:
        try:
            euler_data(F, *spec["euler"])
            out.check("euler", True)
        except EulerFieldError as exc:
            out.check("euler", False, error=str(exc))


def cmd_canonical(args, spec, out: Out):
    F, E = build(spec, args.base, args.degree)
    cc = canonical_coordinates(F, E)
    for i, u in enumerate(cc.u):
        out.record("u", i=i + 1, series=u.format())
    out.record("direction", source=cc.direction_source, vector=[frac_str(x) for x in cc.direction])


def cmd_frame(args, spec, out: Out):
    F, E = build(spec, args.base, args.degree)
    fr = semisimple_frame(F, E)
    for i, u in enumerate(fr.u):
        out.record("u", i=i + 1, series=u.format())
    out.record("PsiTilde", matrix=_series_mat(fr.psi_tilde))
    out.record("H", diagonal=[h.format() for h in fr.H])
    out.record("Gamma", matrix=_series_mat(fr.gamma))
    out.record("Psi(base)", matrix=_mat(fr.psi_at_base()))
    if fr.delta is not None:
        out.record("delta", values=[frac_str(x) for x in fr.delta])
    rep = darboux_checks(fr)
    out.check("frame", rep.ok, **rep.as_dict())


def _rmatrix(args, F, E):
    fr = semisimple_frame(F, E)
    if args.homogeneous:
        if E is None:
            raise SpecError("--homogeneous needs Euler data in the spec")
        return fr, rmatrix_homogeneous(fr, args.K)
    return fr, rmatrix_sequence(fr, args.K, _diag_constants(args, F.N))


def _diag_constants(args, N):
    if not getattr(args, "diag", None):
        return None
    rows = []
    for chunk in args.diag.split(";"):
        vals = _parse_vector(chunk, "--diag")
        if len(vals) != N:
            raise SpecError(f"--diag: each z-order needs {N} values")
        rows.append(vals)
    return rows


def cmd_rmatrix(args, spec, out: Out):
    F, E = build(spec, args.base, args.degree)
    fr, R = _rmatrix(args, F, E)
    for k, m in enumerate(base_values(R)):
        if k:
            out.record("R", k=k, gauge=R.gauge, matrix=[list(r) for r in m])
    rep = rmatrix_verify(R, fr)
    fields = {"residuals": [frac_str(x) for x in rep.residuals]}
    if rep.homogeneity is not None:
        fields["homogeneity"] = [frac_str(x) for x in rep.homogeneity]
    out.check("rmatrix", rep.ok, **fields)


def cmd_calibrate(args, spec, out: Out):
    F, _ = build(spec, args.base, args.degree)
    cal = genus0.ancestor_calibration(F.centered(), args.K)
    for d in range(min(cal.K, 3)):
        out.record("Omega0", d=d, matrix=_series_mat(cal.upper(d)))
    res = genus0.calibration_residual(cal)
    out.check("calibration", res == 0, residual=frac_str(res))


def _family(args, F):
    return genus0.ancestor_family(F, args.amax, args.P, args.B)


def cmd_potentials(args, spec, out: Out):
    F, _ = build(spec, args.base, args.degree)
    fam = _family(args, F)
    out.stream.write(fam.export())


def cmd_cone_check(args, spec, out: Out):
    F, _ = build(spec, args.base, args.degree)
    rep = genus0.cone_residuals(_family(args, F))
    out.check("cone", rep.ok, **rep.as_dict())


def cmd_act(args, spec, out: Out):
    F, E = build(spec, args.base, args.degree)
    rec = genus0.reconstruct_R(F, E, A_max=args.amax, P=args.P, B=args.B, K=args.K)
    rep = genus0.cone_residuals(rec.rebuilt)
    if args.export:
        out.stream.write(rec.rebuilt.export())
    out.check("cone", rep.ok, **rep.as_dict())


def cmd_reconstruct(args, spec, out: Out):
    F, E = build(spec, args.base, args.degree)
    rec = genus0.reconstruct_R(F, E, A_max=args.amax, P=args.P, B=args.B, K=args.K)
    out.record("Psi(0)", matrix=_mat(rec.psi0))
    for k, m in enumerate(rec.R0.coeffs):
        if k:
            out.record("R(0)", k=k, gauge=rec.gauge, matrix=_mat(m))
    out.check("reconstruction", rec.ok, differing=[f"F^{a + 1},{b}" for a, b in rec.residual])


def _engine_args(args, spec):
    F, E = build(spec, args.base, args.degree)
    G0 = _parse_vector(args.G0, "--G0")
    if len(G0) != F.N:
        raise SpecError(f"--G0 needs {F.N} values")
    genera = _parse_ints(args.genus, "--genus")
    dim = max(3 * g - 2 + args.n_max for g in genera)
    if args.tau_order:
        dim = max(dim, max(3 * g - 2 + args.n_max + args.tau_order for g in genera))
    # homogeneous gauge whenever Euler data exists, unless constants are given
    diag = _diag_constants(args, F.N)
    euler = E if diag is None else None
    P = fcohft.pipeline(F, euler, max(dim, 1), diag)
    return F, E, G0, genera, P


def cmd_correlators(args, spec, out: Out):
    F, E, G0, genera, P = _engine_args(args, spec)
    if args.tau_order:
        data = P.at_formal_point(G0, args.tau_order)
    else:
        data = P.at_base(G0)
    eng = fcohft.CorrelatorEngine(data)
    if args.insertions is not None or args.root is not None:
        root = _parse_insertions(args.root or "1:0", F.N)[0]
        ins = _parse_insertions(args.insertions or "", F.N)
        for g in genera:
            val = eng.correlator(g, root, ins)
            table = fcohft.CorrelatorTable({(g, root, ins): val}, {})
            _emit_table(table, out)
        return
    table = fcohft.correlator_table(eng, genera, args.n_max, args.max_level)
    _emit_table(table, out)


def _emit_table(table, out: Out):
    if out.fmt == "jsonl":
        for line in table.export().splitlines()[1:]:
            out.stream.write(line + "\n")
    else:
        out.stream.write(table.format())


def cmd_homogeneity(args, spec, out: Out):
    F, E, G0, genera, P = _engine_args(args, spec)
    if E is None:
        raise SpecError("homogeneity needs Euler data in the spec")
    order = max(args.tau_order, 1)
    gamma = fcohft.conformal_dimension(P.frame.delta, G0)
    eng = fcohft.CorrelatorEngine(P.at_formal_point(G0, order + 1))
    table = fcohft.correlator_table(eng, genera, args.n_max, args.max_level)
    bad = fcohft.homogeneity_residuals(table, E, gamma, order)
    out.record("conformal-dim", value=frac_str(gamma))
    dz = fcohft.degree_zero_part(P.frame.psi_at_base(), G0)
    out.record("degree-zero", values=[frac_str(x) for x in dz])
    out.check("homogeneity", not bad, entries=len(table.entries), failing=len(bad))


COMMANDS = {
    "validate": cmd_validate,
    "canonical": cmd_canonical,
    "frame": cmd_frame,
    "rmatrix": cmd_rmatrix,
    "calibrate": cmd_calibrate,
    "potentials": cmd_potentials,
    "cone-check": cmd_cone_check,
    "act": cmd_act,
    "reconstruct": cmd_reconstruct,
    "correlators": cmd_correlators,
    "homogeneity": cmd_homogeneity,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", required=True, help="manifold spec file (JSON)")
    common.add_argument("--base", help="base point, comma-separated fractions (overrides the spec)")
    common.add_argument("--degree", type=int, help="truncation degree D (overrides the spec)")
    common.add_argument("--format", choices=("table", "jsonl"), default="table")
    common.add_argument("--strict", action="store_true", help="exit 1 on any nonzero residual")

    fam = argparse.ArgumentParser(add_help=False)
    fam.add_argument("--amax", type=int, default=2)
    fam.add_argument("-P", type=int, default=4)
    fam.add_argument("-B", type=int, default=3)

    cor = argparse.ArgumentParser(add_help=False)
    cor.add_argument("--G0", required=True, help="genus-one datum in the idempotent frame")
    cor.add_argument("--genus", default="0,1", help="comma-separated genera")
    cor.add_argument("--n-max", type=int, default=2, dest="n_max")
    cor.add_argument("--max-level", type=int, default=None, dest="max_level")
    cor.add_argument("--tau-order", type=int, default=0, dest="tau_order")
    cor.add_argument("--diag", help="free-gauge diagonal constants, ';' between z-orders")

    p = argparse.ArgumentParser(prog="flatf", description="flat F-manifolds, Givental-type actions and F-CohFT correlators")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common])
    sub.add_parser("canonical", parents=[common])
    sub.add_parser("frame", parents=[common])
    r = sub.add_parser("rmatrix", parents=[common])
    r.add_argument("-K", type=int, default=3)
    r.add_argument("--homogeneous", action="store_true")
    r.add_argument("--diag", help="free-gauge diagonal constants, ';' between z-orders")
    c = sub.add_parser("calibrate", parents=[common])
    c.add_argument("-K", type=int, default=4)
    sub.add_parser("potentials", parents=[common, fam])
    sub.add_parser("cone-check", parents=[common, fam])
    a = sub.add_parser("act", parents=[common, fam])
    a.add_argument("-K", type=int, default=3)
    a.add_argument("--export", action="store_true", help="print the rebuilt family")
    rc = sub.add_parser("reconstruct", parents=[common, fam])
    rc.add_argument("-K", type=int, default=3)
    cr = sub.add_parser("correlators", parents=[common, cor])
    cr.add_argument("--root", help="root insertion alpha:power (1-based alpha)")
    cr.add_argument("--insertions", help="insertions alpha:power,... (1-based alpha)")
    sub.add_parser("homogeneity", parents=[common, cor])
    return p


def _cache_path():
    d = os.environ.get("FLATF_CACHE_DIR")
    return Path(d) / "psi.jsonl" if d else None


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    out = Out(args.format)
    cache = _cache_path()
    try:
        if args.base is not None:
            args.base = _parse_vector(args.base, "--base")
        if cache is not None and cache.exists():
            psikappa.load_cache(cache.read_text())
        spec = load_spec(args.spec)
        COMMANDS[args.command](args, spec, out)
    except (SpecError, EulerFieldError, ValueError, ArithmeticError) as exc:
        sys.stderr.write(f"flatf {args.command}: {exc}\n")
        return 2
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        cache.write_text(psikappa.dump_cache())
    if args.strict and out.failed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
