"""First integrals of the characteristic field and the implicit solution.

A first integral rho satisfies X rho = 0, so it is constant along every
characteristic.  Given a nondegenerate set rho_1..rho_{n+1} and a defining
function f of the image of the initial set, F = f o rho vanishes on the
initial set and its zero set is invariant under the flow; F = 0 is the
implicit solution the rest of the pipeline works with.

Conservation-law problems u_t + sum a_k(u) u_{x_k} = 0 get their integrals
built in: rho_1 = u and rho_{k+1} = x_k - a_k(u) t.  For anything else the
integrals (and, unless the data is a graph over rho_2.., the defining
function) must come from the problem file; no discovery is attempted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import (Const, EvalDomainError, Expr, Var, diff, evaluate,
                   mul, sub, substitute, to_str, var_names, variables)
from .problem import (Box, InitialData, Problem, VectorField,
                      characteristic_field, initial_set_samples)

RESIDUAL_TOL = 1e-8
GAMMA_TOL = 1e-10
FU_MIN_ON_GAMMA = 1e-6
FLOW_TOL = 1e-8
MIN_SINGULAR_VALUE = 1e-6
_RNG_SEED = 74025317  # fixed seed so reports are deterministic


class FirstIntegralError(Exception):
    """A rho check failed (residual, nondegeneracy, or construction)."""


class ImplicitSolutionError(Exception):
    """Building F = f o rho violated one of its defining properties."""


@dataclass(frozen=True)
class FirstIntegralSet:
    rho: tuple[Expr, ...]
    provenance: str  # "builtin-conservation" | "user-supplied"

    @property
    def count(self) -> int:
        return len(self.rho)


@dataclass
class ResidualReport:
    """Absolute-plus-relative residual statistics of X rho over samples."""

    max_residual: float
    mean_residual: float
    worst_point: list[float] | None
    passed: bool
    tol: float
    excluded: list  # (point, reason) pairs for domain violations

    def to_json(self) -> str:
        return json.dumps({
            "max_residual": self.max_residual,
            "mean_residual": self.mean_residual,
            "worst_point": self.worst_point,
            "pass": self.passed,
        }, sort_keys=True)


@dataclass
class NondegeneracyReport:
    ok: bool
    min_singular_value: float
    worst_point: list[float] | None
    excluded: list


@dataclass(frozen=True)
class ImplicitSolution:
    """F = f o rho with its u-derivative and gradient cached."""

    f: Expr
    F: Expr
    F_u: Expr
    gradient: tuple[Expr, ...]     # dF/d(t, x1..xn, u)
    gamma_samples: np.ndarray
    n: int


def apply_field(fld: VectorField, g: Expr) -> Expr:
    """The directional derivative X g = sum_i comp_i * dg/dvar_i."""
    names = var_names(fld.n)
    out: Expr = Const(0.0)
    for comp, name in zip(fld.components, names):
        out = out + mul(comp, diff(g, name))
    return out


def verify_first_integral(fld: VectorField, rho: Expr, samples,
                          tol: float = RESIDUAL_TOL) -> ResidualReport:
    """Check |X rho| <= tol * (1 + |rho|) at each sample.

    Points where rho or X rho hits a domain violation are excluded from
    the statistics and listed separately.
    """
    residual = apply_field(fld, rho)
    names = var_names(fld.n)
    vals = []
    excluded = []
    worst = None
    worst_norm = -1.0
    for point in np.asarray(samples, dtype=float):
        binding = dict(zip(names, point.tolist()))
        try:
            r = abs(evaluate(residual, binding))
            scale = 1.0 + abs(evaluate(rho, binding))
        except EvalDomainError as err:
            excluded.append((point.tolist(), str(err)))
            continue
        vals.append(r)
        if r / scale > worst_norm:
            worst_norm = r / scale
            worst = point.tolist()
    if not vals:
        return ResidualReport(float("nan"), float("nan"), None, False, tol,
                              excluded)
    return ResidualReport(max(vals), float(np.mean(vals)), worst,
                          worst_norm <= tol, tol, excluded)


def conservation_law_integrals(a: Sequence[Expr]) -> FirstIntegralSet:
    """(u, x_1 - a_1(u) t, ..., x_n - a_n(u) t) for speeds a_k(u)."""
    for k, ak in enumerate(a):
        extra = variables(ak) - {"u"}
        if extra:
            raise FirstIntegralError(
                f"a[{k}] = {to_str(ak)} must depend on u only "
                f"(found {sorted(extra)}); not in conservation form")
    t = Var("t")
    rho = [Var("u")]
    rho += [sub(Var(f"x{k + 1}"), mul(ak, t)) for k, ak in enumerate(a)]
    return FirstIntegralSet(tuple(rho), "builtin-conservation")


def check_nondegeneracy(rho_set: FirstIntegralSet, samples, n: int,
                        min_sv: float = MIN_SINGULAR_VALUE) -> NondegeneracyReport:
    """Smallest singular value of the (n+1) x (n+2) Jacobian of rho at each
    sample; nondegenerate iff it stays >= min_sv everywhere."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("at least one sample is required")
    names = var_names(n)
    grads = [[diff(r, v) for v in names] for r in rho_set.rho]
    worst = None
    min_seen = np.inf
    excluded = []
    for point in samples:
        binding = dict(zip(names, point.tolist()))
        try:
            jac = np.array([[evaluate(g, binding) for g in row] for row in grads])
        except EvalDomainError as err:
            excluded.append((point.tolist(), str(err)))
            continue
        sv = np.linalg.svd(jac, compute_uv=False)[-1]
        if sv < min_seen:
            min_seen = sv
            worst = point.tolist()
    ok = bool(min_seen >= min_sv) and not np.isinf(min_seen)
    return NondegeneracyReport(ok, float(min_seen), worst, excluded)


def defining_function_from_initial(d: InitialData,
                                   mode: str = "conservation") -> Expr:
    """f(y1, y2) = y1 - h(y2): the graph form of the image of the initial
    set under conservation-law integrals (n = 1 only)."""
    if mode != "conservation":
        raise FirstIntegralError(
            f"unsupported mode {mode!r}: supply f in the problem file")
    if d.n != 1:
        raise FirstIntegralError(
            "automatic defining function needs n = 1; supply f explicitly")
    h_in_y2 = substitute(d.h, {"x1": Var("y2")})
    return sub(Var("y1"), h_in_y2)


def _newton_u(F: Expr, F_u: Expr, binding: dict, u0: float,
              tol: float = 1e-12, maxit: int = 40):
    """Small local Newton in u used to project samples onto {F = 0}."""
    u = float(u0)
    for _ in range(maxit):
        binding["u"] = u
        r = evaluate(F, binding)
        if abs(r) <= tol:
            return u
        du = evaluate(F_u, binding)
        if du == 0.0 or not np.isfinite(du):
            return None
        step = -r / du
        if not np.isfinite(step):
            return None
        u += step
        if abs(step) > 1e8:
            return None
    binding["u"] = u
    return u if abs(evaluate(F, binding)) <= tol else None


def build_implicit_solution(rho_set: FirstIntegralSet, f: Expr, gamma,
                            fld: VectorField, box: Box,
                            flow_samples: int = 200) -> ImplicitSolution:
    """Compose F = f o rho and enforce its defining properties.

    Raises ImplicitSolutionError if F fails to vanish on the initial set,
    if F_u degenerates there, or if the flow-invariance residual X F is
    too large at surface samples.  A failed check is an error, never a
    warning.
    """
    n = len(rho_set.rho) - 1
    ynames = {f"y{k}" for k in range(1, n + 2)}
    extra = variables(f) - ynames
    if extra:
        raise ImplicitSolutionError(
            f"f may only use y1..y{n + 1}, found {sorted(extra)}")
    mapping = {f"y{k + 1}": r for k, r in enumerate(rho_set.rho)}
    F = substitute(f, mapping)
    names = var_names(n)
    gradient = tuple(diff(F, v) for v in names)
    F_u = gradient[-1]
    gamma = np.asarray(gamma, dtype=float)

    for point in gamma:
        binding = dict(zip(names, point.tolist()))
        try:
            fv = evaluate(F, binding)
            fu = evaluate(F_u, binding)
        except EvalDomainError as err:
            raise ImplicitSolutionError(
                f"F fails to evaluate on the initial set: {err}") from err
        if abs(fv) > GAMMA_TOL * (1.0 + abs(fv)):
            raise ImplicitSolutionError(
                f"F does not vanish on the initial set: |F| = {abs(fv):.3e} "
                f"at {point.tolist()}")
        if abs(fu) < FU_MIN_ON_GAMMA:
            raise ImplicitSolutionError(
                f"F_u = {fu:.3e} degenerates on the initial set at "
                f"{point.tolist()}")

    _check_flow_invariance(F, F_u, gradient, fld, box, gamma, flow_samples)
    return ImplicitSolution(f, F, F_u, gradient, gamma, n)


def _check_flow_invariance(F, F_u, gradient, fld, box, gamma, count):
    """|X F| at points of {F = 0}: the initial samples plus random box
    points projected onto the surface by Newton in u."""
    n = fld.n
    names = var_names(n)
    residual = apply_field(fld, F)
    points = [p.tolist() for p in gamma]
    rng = np.random.default_rng(_RNG_SEED)
    lows, highs = box.lows(), box.highs()
    attempts = 0
    while len(points) < len(gamma) + count and attempts < 20 * count:
        attempts += 1
        draw = lows + rng.random(n + 2) * (highs - lows)
        binding = dict(zip(names, draw.tolist()))
        u = _newton_u(F, F_u, binding, draw[-1])
        if u is None:
            continue
        candidate = list(draw[:-1]) + [u]
        if box.contains(candidate):
            points.append(candidate)
    for point in points:
        binding = dict(zip(names, point))
        try:
            r = abs(evaluate(residual, binding))
            scale = 1.0
            for comp, g in zip(fld.components, gradient):
                scale += abs(evaluate(comp, binding) * evaluate(g, binding))
        except EvalDomainError:
            continue
        if r > FLOW_TOL * scale:
            raise ImplicitSolutionError(
                f"zero set is not flow-invariant: |XF| = {r:.3e} "
                f"(scale {scale:.3e}) at {point}")


def implicit_solution_for_problem(problem: Problem, data: InitialData,
                                  rho: tuple[Expr, ...] | None = None,
                                  f: Expr | None = None,
                                  gamma_count: int = 65,
                                  verify_tol: float = RESIDUAL_TOL,
                                  ):
    """Assemble (FirstIntegralSet, ImplicitSolution) for one problem.

    User-supplied rho/f are validated; otherwise the conservation-law
    construction is used when the problem has that form.
    """
    fld = characteristic_field(problem)
    gamma = initial_set_samples(data, 1 if problem.n == 0 else gamma_count)

    if rho is not None:
        rho_set = FirstIntegralSet(tuple(rho), "user-supplied")
    else:
        if not (problem.alpha == Const(1.0) and problem.b == Const(0.0)):
            raise FirstIntegralError(
                "no rho in the problem file and the equation is not a "
                "conservation law; cannot construct first integrals")
        rho_set = conservation_law_integrals(problem.a)

    samples = verification_samples(problem.box, gamma)
    for k, r in enumerate(rho_set.rho):
        report = verify_first_integral(fld, r, samples, verify_tol)
        if not report.passed:
            raise FirstIntegralError(
                f"rho[{k}] = {to_str(r)} is not a first integral: "
                f"max |X rho| = {report.max_residual:.3e} at {report.worst_point}")
    ndg = check_nondegeneracy(rho_set, gamma, problem.n)
    if not ndg.ok:
        raise FirstIntegralError(
            f"rho is degenerate on the initial set: min singular value "
            f"{ndg.min_singular_value:.3e} at {ndg.worst_point}")

    if f is None:
        if rho_set.provenance != "builtin-conservation":
            raise FirstIntegralError(
                "no f in the problem file and rho is not the built-in "
                "conservation set; cannot construct a defining function")
        f = defining_function_from_initial(data)
    sol = build_implicit_solution(rho_set, f, gamma, fld, problem.box)
    return rho_set, sol


def verification_samples(box: Box, gamma: np.ndarray,
                          count: int = 500) -> np.ndarray:
    rng = np.random.default_rng(_RNG_SEED + 1)
    lows, highs = box.lows(), box.highs()
    random_pts = lows + rng.random((count, len(lows))) * (highs - lows)
    return np.vstack([gamma, random_pts])
