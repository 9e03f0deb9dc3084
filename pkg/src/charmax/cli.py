"""charmax: batch front-end for the analytic-extension pipeline.

Subcommands: verify, domain, query, characteristics, singular, envelope.
One problem file drives everything; outputs are plot-ready CSV/JSON dumps.
Exit codes: 0 success, 1 I/O or parse error, 2 validation or convergence
failure.  Identical config and problem file give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import conslaw
from .characteristics import characteristic_strip
from .domain import (ContinuationParams, NoConvergenceError,
                     PathLeftWindowError, ProjectionError, contains,
                     maximal_domain)
from .expr import Const, EvalDomainError, ParseError, to_str
from .integrals import (FirstIntegralError, ImplicitSolutionError,
                        verification_samples, check_nondegeneracy,
                        implicit_solution_for_problem, verify_first_integral)
from .locus import (ResolutionError, extract_singular_locus, extract_surface,
                    points_csv, split_component)
from .problem import (SchemaError, ValidationError, characteristic_field,
                      initial_set_samples, load_problem_bundle)

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2

GRAMMAR_NOTE = (
    "Expression grammar: + - * / ^ (all left-associative, ^ strongest and "
    "binding tighter than unary minus, so -x^2 means -(x^2)); functions "
    "exp, log, sin, cos, sqrt; variables t, x1..xn, u (x aliases x1 when "
    "n = 1)."
)


def _default_resolution(n: int) -> int:
    return 1024 if n == 0 else 128


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _csv_to_json(text: str) -> str:
    lines = [l for l in text.strip().splitlines() if l]
    header = lines[0].split(",")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    return json.dumps({"columns": header, "rows": rows}, sort_keys=True)


def _dump(out_dir: Path, stem: str, csv_text: str, fmt: str) -> Path:
    if fmt == "json":
        return _write(out_dir, f"{stem}.json", _csv_to_json(csv_text))
    return _write(out_dir, f"{stem}.csv", csv_text)


def _load(args):
    bundle = load_problem_bundle(args.problem)
    return bundle


def _solution(bundle):
    return implicit_solution_for_problem(bundle.problem, bundle.data,
                                         bundle.rho, bundle.f)


def cmd_verify(args) -> int:
    bundle = _load(args)
    rho_set, sol = _solution(bundle)
    problem = bundle.problem
    fld = characteristic_field(problem)
    samples = verification_samples(problem.box, sol.gamma_samples)
    reports = []
    print(f"first integrals ({rho_set.provenance}):")
    for r in rho_set.rho:
        rep = verify_first_integral(fld, r, samples)
        reports.append(rep)
        print(f"  rho = {to_str(r)}: max |X rho| = {rep.max_residual!r}")
    ndg = check_nondegeneracy(rho_set, sol.gamma_samples, problem.n)
    print(f"nondegeneracy: min singular value {ndg.min_singular_value!r}")
    print(f"F = {to_str(sol.F)}")
    print(f"F vanishes on the initial set at {len(sol.gamma_samples)} samples")
    print("F_u nondegenerate on the initial set")
    print("zero set flow-invariant at sampled surface points")
    doc = {"rho": [json.loads(r.to_json()) for r in reports],
           "min_singular_value": ndg.min_singular_value,
           "F": to_str(sol.F)}
    _write(Path(args.out), "verify.json", json.dumps(doc, sort_keys=True))
    print("PASS")
    return EXIT_OK


def cmd_domain(args) -> int:
    bundle = _load(args)
    _, sol = _solution(bundle)
    resolution = args.resolution or _default_resolution(bundle.problem.n)
    surface = extract_surface(sol.F, bundle.problem.box, resolution)
    sigma = extract_singular_locus(sol.F, surface)
    component = split_component(surface, sigma, sol.gamma_samples)
    dom = maximal_domain(component, sigma)

    out_dir = Path(args.out)
    _write(out_dir, "domain.json", dom.to_json())
    boundary_points = sum(len(b.points) for b in dom.boundary)
    summary = {
        "area_of_mask": dom.mask_area(),
        "boundary_point_count": boundary_points,
        "sigma_point_count": int(len(sigma.points)),
    }
    _write(out_dir, "summary.json", json.dumps(summary, sort_keys=True))
    print(f"mask area {summary['area_of_mask']!r}, "
          f"{boundary_points} boundary points, "
          f"{len(sigma.points)} sigma points")
    return EXIT_OK


def cmd_query(args) -> int:
    bundle = _load(args)
    _, sol = _solution(bundle)
    n = bundle.problem.n
    if args.t is None:
        print("query needs --t (and --x when n >= 1)", file=sys.stderr)
        return EXIT_IO
    if n >= 1 and args.x is None:
        print("query needs --x for this problem", file=sys.stderr)
        return EXIT_IO
    q = [args.t] + ([args.x] if n >= 1 else [])
    verdict = contains(bundle.problem, bundle.data, sol, q,
                       params=ContinuationParams())
    print(str(verdict))
    return EXIT_OK


def cmd_characteristics(args) -> int:
    bundle = _load(args)
    problem, data = bundle.problem, bundle.data
    fld = characteristic_field(problem)
    count = 1 if problem.n == 0 else args.samples
    seeds = initial_set_samples(data, count)
    span = (0.0, args.span)
    strip = characteristic_strip(fld, seeds, span, tol=args.tol,
                                 box=problem.box)
    out_dir = Path(args.out)
    written = 0
    for i, curve in enumerate(strip.curves):
        if curve is None:
            continue
        _dump(out_dir, f"characteristic_{i:03d}", curve.to_csv(), args.format)
        written += 1
    for idx, err in strip.errors:
        print(f"seed {idx}: {err}", file=sys.stderr)
    print(f"wrote {written} characteristic curves")
    return EXIT_OK if not strip.errors else EXIT_VALIDATION


def cmd_singular(args) -> int:
    bundle = _load(args)
    _, sol = _solution(bundle)
    resolution = args.resolution or _default_resolution(bundle.problem.n)
    surface = extract_surface(sol.F, bundle.problem.box, resolution)
    sigma = extract_singular_locus(sol.F, surface)

    text = points_csv(surface, sigma, with_surface=args.with_surface)
    out_dir = Path(args.out)
    if args.format == "json":
        lines = text.strip().splitlines()
        doc = {"columns": lines[0].split(","),
               "rows": [line.split(",") for line in lines[1:]]}
        _write(out_dir, "sigma.json", json.dumps(doc, sort_keys=True))
    else:
        _write(out_dir, "sigma.csv", text)
    print(f"{len(sigma.points)} sigma points "
          f"({int(np.count_nonzero(sigma.degenerate))} degenerate, "
          f"{sigma.dropped} seeds dropped)")
    return EXIT_OK


def cmd_envelope(args) -> int:
    bundle = _load(args)
    problem, data = bundle.problem, bundle.data
    if problem.n != 1 or problem.alpha != Const(1.0) or problem.b != Const(0.0):
        print("envelope needs a 1-D conservation-law problem "
              "(alpha = 1, b = 0, a = a(u))", file=sys.stderr)
        return EXIT_VALIDATION
    law = conslaw.ConservationLaw.from_parts(problem.a[0], data.h)
    curve = conslaw.envelope(law, data.interval, args.samples)
    _dump(Path(args.out), "envelope", curve.to_csv(law), args.format)
    print(f"wrote {len(curve)} envelope samples")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="charmax",
        description="Maximal single-valued extension domains for first-order "
                    "quasi-linear Cauchy problems.",
        epilog=GRAMMAR_NOTE)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, resolution=False):
        p.add_argument("--problem", required=True, help="problem file (JSON)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if resolution:
            p.add_argument("--resolution", type=int, default=None,
                           help="cells per axis (default 1024 for n=0, "
                                "128 for n=1)")

    common(sub.add_parser("verify", help="check first integrals and F"))
    common(sub.add_parser("domain", help="extract the maximal domain"),
           resolution=True)
    q = sub.add_parser("query", help="classify one base point")
    common(q)
    q.add_argument("--t", type=float, default=None)
    q.add_argument("--x", type=float, default=None)
    c = sub.add_parser("characteristics", help="dump characteristic curves")
    common(c)
    c.add_argument("--samples", type=int, default=9)
    c.add_argument("--span", type=float, default=10.0)
    c.add_argument("--tol", type=float, default=1e-10)
    s = sub.add_parser("singular", help="dump the singular locus")
    common(s, resolution=True)
    s.add_argument("--with-surface", action="store_true",
                   help="also dump surface patch vertices")
    e = sub.add_parser("envelope", help="dump the characteristic envelope")
    common(e)
    e.add_argument("--samples", type=int, default=201)
    return parser


_COMMANDS = {
    "verify": cmd_verify,
    "domain": cmd_domain,
    "query": cmd_query,
    "characteristics": cmd_characteristics,
    "singular": cmd_singular,
    "envelope": cmd_envelope,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (OSError, SchemaError, ParseError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, FirstIntegralError, ImplicitSolutionError,
            ResolutionError, ProjectionError, NoConvergenceError,
            PathLeftWindowError, EvalDomainError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
