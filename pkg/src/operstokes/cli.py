"""Batch front end: every pipeline behind one reproducible command.

Subcommands
    basis      print the weight basis and structure tables for one n
    verify     run the exact Lie-algebra suites for 2 <= n <= n-max
    kernel     exact solvability of the joint deformation system
    stokes     numerical Stokes data of one oper point
    jacobian   differential of the monodromy map, singular values, rank

Every flag has an environment-variable override (prefix OPERSTOKES_, dashes
as underscores, e.g. OPERSTOKES_TRUNC_ORDER=30); an explicit flag beats the
environment.  Identical configurations produce byte-identical documents:
timing is only emitted under --timing, and all floats serialize via repr
(shortest round-trip).  Complex numbers appear as [re, im] pairs.

Exit codes: 0 success, 1 mathematical-suite failure, 2 usage or configuration
error, 3 numerical non-convergence.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from fractions import Fraction

import numpy as np

from .exactla import rational_str
from .isomono import OperPoint, solvability
from .immersion import jacobian as jacobian_report
from .sl2 import (a_formula, build_weight_basis, commuting_action_check,
                  compute_structure_tables, principal_sl2,
                  verify_sign_property)
from .stokes import (StokesSettings, formal_solution, gauge_transform,
                     make_ctx, stokes_data)

EXIT_OK = 0
EXIT_SUITE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration plumbing

def _env_default(name, fallback, cast):
    raw = os.environ.get("OPERSTOKES_" + name.upper().replace("-", "_"))
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad environment override OPERSTOKES_"
                         f"{name.upper().replace('-', '_')}={raw!r}: {exc}")


def _add_common(sub):
    sub.add_argument("--output", default=_env_default("output", None, str),
                     help="write the document to this file instead of stdout")
    sub.add_argument("--timing", action="store_true",
                     help="include wall-clock timings (breaks byte "
                          "determinism, off by default)")
    sub.add_argument("--seed", type=int,
                     default=_env_default("seed", 0, int),
                     help="seed echoed into the document for randomized "
                          "suites built on top of this CLI")


def _add_oper_flags(sub):
    sub.add_argument("--n", type=int, default=_env_default("n", None, int))
    sub.add_argument("--k", type=int, default=_env_default("k", None, int))
    sub.add_argument("--degree", type=int,
                     default=_env_default("degree", None, int),
                     help="degree d of the monic polynomial; with it --poly "
                          "lists only c_0..c_{d-2}")
    sub.add_argument("--poly", default=_env_default("poly", None, str),
                     help="ascending comma-separated coefficients; full "
                          "list ending in the leading 1, or the free "
                          "coefficients when --degree is given")
    sub.add_argument("--config", default=_env_default("config", None, str),
                     help="JSON document {n, k, coefficients: [[re,im], ...]}"
                          " in place of the flags")


def _add_numeric_flags(sub):
    sub.add_argument("--trunc-order", type=int,
                     default=_env_default("trunc-order", 20, int))
    sub.add_argument("--radius-tol", type=float,
                     default=_env_default("radius-tol", 1e-10, float))
    sub.add_argument("--ode-tol", type=float,
                     default=_env_default("ode-tol", 1e-10, float))
    sub.add_argument("--precision-bits", type=int,
                     default=_env_default("precision-bits", 53, int))
    sub.add_argument("--threads", type=int,
                     default=_env_default("threads", 1, int))
    sub.add_argument("--method", choices=["collocation", "transport"],
                     default=_env_default("method", "collocation", str))
    sub.add_argument("--radius", type=float,
                     default=_env_default("radius", 0.0, float),
                     help="fixed reading/seeding radius (0 = adaptive)")
    sub.add_argument("--v0", default=_env_default("v0", None, str),
                     help="base direction as a fraction of pi, e.g. 1/16")


def _parse_coefficient(text):
    text = text.strip()
    try:
        return Fraction(text)
    except ValueError:
        pass
    try:
        return complex(text)
    except ValueError:
        raise UsageError(f"cannot parse coefficient {text!r}")


def _oper_from_args(args):
    if args.config:
        if args.poly:
            raise UsageError("give either --poly or --config, not both")
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            n, k = int(doc["n"]), int(doc["k"])
            coeffs = tuple(complex(re, im) for re, im in doc["coefficients"])
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise UsageError(f"bad config document: {exc}")
        return _checked_oper(n, k, coeffs)
    if args.n is None or args.k is None or args.poly is None:
        raise UsageError("need --n, --k and --poly (or --config)")
    entries = [_parse_coefficient(t) for t in args.poly.split(",")]
    if args.degree is not None:
        if len(entries) != args.degree - 1:
            raise UsageError(f"--degree {args.degree} wants the "
                             f"{args.degree - 1} coefficients c_0..c_"
                             f"{args.degree - 2}, got {len(entries)}")
        coeffs = entries
    else:
        if len(entries) < 2 or entries[-1] != 1:
            raise UsageError("--poly without --degree must be the full "
                             "ascending list ending in the leading 1")
        if entries[-2] != 0:
            raise UsageError("the z^{d-1} coefficient must be 0 in this "
                             "normalized family")
        coeffs = entries[:-2]
    return _checked_oper(args.n, args.k, tuple(coeffs))


def _checked_oper(n, k, coeffs):
    if n < 2 or k < 1:
        raise UsageError("need n >= 2 and k >= 1")
    d = n * k
    if len(coeffs) != d - 1:
        raise UsageError(f"degree d = n*k = {d} wants {d - 1} coefficients "
                         f"c_0..c_{d - 2}, got {len(coeffs)}")
    return OperPoint(n, k, tuple(coeffs))


def _settings_from_args(args):
    v0 = None
    if getattr(args, "v0", None):
        try:
            v0 = Fraction(args.v0)
        except ValueError:
            raise UsageError(f"cannot parse --v0 {args.v0!r} as a fraction")
    return StokesSettings(
        trunc_order=args.trunc_order, ode_rtol=args.ode_tol,
        radius_tol=args.radius_tol, radius=args.radius,
        precision_bits=args.precision_bits, threads=args.threads,
        v0=v0, method=args.method)


# ---------------------------------------------------------------------------
# serialization

def _c2(z):
    z = complex(z)
    return [z.real, z.imag]


def _cmat(mat):
    return [[_c2(v) for v in row] for row in np.asarray(mat)]


def _emit(args, text):
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(args, doc):
    _emit(args, json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_basis(args):
    if args.n is None or args.n < 2:
        raise UsageError("basis needs --n >= 2")
    tri = principal_sl2(args.n)
    basis = build_weight_basis(tri)
    tables = compute_structure_tables(basis)
    sign = verify_sign_property(tables)
    out = io.StringIO()
    out.write(f"weight basis of sl({args.n}): v_ij = (ad_e)^(i+j) f_i\n")
    for (i, j) in basis.indices():
        out.write(f"v {i} {j}\n")
        for row in basis.vec(i, j):
            out.write("  " + " ".join(rational_str(v) for v in row) + "\n")
    out.write(tables.serialize())
    out.write(f"sign strings checked: {sign.strings_checked}\n")
    out.write(f"recursions checked: {sign.recursions_checked}\n")
    out.write(f"violations: {len(sign.violations)}\n")
    _emit(args, out.getvalue())
    return EXIT_OK if sign.ok else EXIT_SUITE


def _verify_one(n, corrupt=False):
    """Exact suite at one rank; returns (ok, line)."""
    tri = principal_sl2(n)
    basis = build_weight_basis(tri)          # raises if span/grading fail
    tables = compute_structure_tables(basis)  # raises if a-formula fails
    checks = {
        "span": True,
        "a-formula": all(tables.a_val(i, j) == a_formula(i, j)
                         for (i, j) in tables.a),
        "commuting": commuting_action_check(basis),
    }
    if n >= 2:
        checks["c-corner"] = tables.c_val(n - 1, n - 1, n - 2) == 2 * (n - 1)
    if n >= 3:
        checks["c-next"] = tables.c_val(n - 1, n - 2, n - 2) == 2
        checks["c-null"] = tables.c_val(n - 2, n - 2, n - 2) == 0
    if corrupt:
        key = max(k for k in tables.c if tables.c[k] != 0)
        tables.c[key] = -tables.c[key]
    sign = verify_sign_property(tables)
    checks["signs"] = sign.ok
    ok = all(checks.values())
    detail = " ".join(f"{name}={'ok' if good else 'FAIL'}"
                      for name, good in sorted(checks.items()))
    return ok, f"n={n} {'ok' if ok else 'FAIL'} ({detail})"


def cmd_verify(args):
    if args.n_max < 2:
        raise UsageError("verify needs --n-max >= 2")
    lines, all_ok = [], True
    for n in range(2, args.n_max + 1):
        ok, line = _verify_one(n)
        all_ok = all_ok and ok
        lines.append(line)
    if args.self_test_corrupt:
        ok, _ = _verify_one(max(3, min(args.n_max, 4)), corrupt=True)
        lines.append("self-test corrupt: "
                     + ("ok (corruption detected)" if not ok
                        else "FAIL (corruption went unnoticed)"))
        all_ok = all_ok and not ok
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if all_ok else EXIT_SUITE


def cmd_kernel(args):
    op = _oper_from_args(args)
    if not op.exact:
        raise UsageError("kernel certificates need exact rational "
                         "coefficients")
    rep = solvability(op, args.D)
    doc = {
        "subcommand": "kernel",
        "n": rep.n, "k": rep.k, "d": rep.d, "D": rep.D,
        "joint_kernel_dim": rep.joint_kernel_dim,
        "tangent_dim": rep.tangent_dim,
        "homogeneous_kernel_dim": rep.homogeneous_kernel_dim,
        "traceless_homogeneous_kernel_dim":
            rep.traceless_homogeneous_kernel_dim,
        "exact": rep.exact,
        "injective": rep.tangent_dim == 0,
        "witness": None if rep.witness is None else {
            "pdot": [rational_str(v) for v in rep.witness[0]],
            "omega_terms": len(rep.witness[1]),
        },
        "seed": args.seed,
    }
    if args.timing:
        doc["timing"] = rep.timing
    _emit_json(args, doc)
    return EXIT_OK


def _stokes_document(op, settings, data):
    ctx = make_ctx(53)
    gc = gauge_transform(op)
    fs = formal_solution(gc, settings.trunc_order, ctx)
    directions = [{"of_pi": str(th % 2), "radians": float(th % 2) * math.pi}
                  for th in data.layout.rays]
    return {
        "subcommand": "stokes",
        "n": data.n, "k": data.k, "d": op.d,
        "coefficients": [_c2(c) for c in op.coeffs],
        "lambda": [_c2(v) for v in data.lam],
        "Q": [[_c2(v) for v in fs.qcoeffs[j]]
              for j in range(1, fs.k + 2)],
        "directions": directions,
        "stokes_factors": [_cmat(m) for m in data.factors],
        "stokes_matrices": [_cmat(m) for m in data.matrices],
        "permutation": list(data.perm),
        "first_upper": bool(data.first_upper),
        "det_twist": data.det_twist,
        "residuals": {name: float(val)
                      for name, val in sorted(data.residuals.items())},
        "settings": {
            "M": settings.trunc_order,
            "R": data.radius,
            "tol": settings.radius_tol,
            "ode_tol": settings.ode_rtol,
            "method": settings.method,
            "precision_bits": getattr(data.plan, "bits",
                                      settings.precision_bits),
        },
    }


def cmd_stokes(args):
    op = _oper_from_args(args)
    settings = _settings_from_args(args)
    data = stokes_data(op, settings)
    doc = _stokes_document(op, settings, data)
    doc["seed"] = args.seed
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "fraction_of_pi", "radians"])
            for idx, ray in enumerate(doc["directions"], start=1):
                writer.writerow([idx, ray["of_pi"], repr(ray["radians"])])
    _emit_json(args, doc)
    return EXIT_OK


def cmd_jacobian(args):
    op = _oper_from_args(args)
    settings = _settings_from_args(args)
    rep = jacobian_report(op, h=args.fd_step, settings=settings,
                          rank_tol=args.rank_tol)
    doc = {
        "subcommand": "jacobian",
        "n": rep.n, "k": rep.k, "d": rep.d,
        "params": [_c2(c) for c in rep.params],
        "h": rep.h,
        "rank_tol": rep.rank_tol,
        "jacobian": _cmat(rep.jacobian),
        "singular_values": list(rep.singular_values),
        "rank": rep.rank,
        "full_rank": rep.rank == rep.d - 1,
        "sv_gap": rep.sv_gap,
        "holomorphy": rep.holomorphy,
        "base_residuals": {name: float(val) for name, val
                           in sorted(rep.base_residuals.items())},
        "seed": args.seed,
    }
    _emit_json(args, doc)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="operstokes",
        description="Stokes data of cyclic opers: exact certificates and "
                    "numerical monodromy")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("basis", help="weight basis and structure tables")
    p.add_argument("--n", type=int, default=_env_default("n", None, int))
    _add_common(p)
    p.set_defaults(func=cmd_basis)

    p = subs.add_parser("verify", help="exact Lie-algebra suites")
    p.add_argument("--n-max", type=int,
                   default=_env_default("n-max", 8, int))
    p.add_argument("--self-test-corrupt", action="store_true",
                   help="negative control: corrupt one table entry and "
                        "demand the suite notices")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = subs.add_parser("kernel", help="exact deformation-kernel report")
    _add_oper_flags(p)
    p.add_argument("--D", type=int, default=_env_default("d-cap", None, int),
                   help="polynomial degree cap of the deformation system")
    _add_common(p)
    p.set_defaults(func=cmd_kernel)

    p = subs.add_parser("stokes", help="numerical Stokes data")
    _add_oper_flags(p)
    _add_numeric_flags(p)
    p.add_argument("--csv", default=_env_default("csv", None, str),
                   help="also write the anti-Stokes directions to this CSV")
    _add_common(p)
    p.set_defaults(func=cmd_stokes)

    p = subs.add_parser("jacobian", help="differential of the monodromy map")
    _add_oper_flags(p)
    _add_numeric_flags(p)
    p.add_argument("--fd-step", type=float,
                   default=_env_default("fd-step", 1e-4, float))
    p.add_argument("--rank-tol", type=float,
                   default=_env_default("rank-tol", 1e-4, float))
    _add_common(p)
    p.set_defaults(func=cmd_jacobian)
    return parser


def main(argv=None):
    try:
        parser = _build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, ZeroDivisionError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
