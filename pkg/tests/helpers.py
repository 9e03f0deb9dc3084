"""Shared test utilities: example pipelines, generators, and oracles."""

from __future__ import annotations

import math

import numpy as np

import charmax
from charmax.domain import contains, maximal_domain
from charmax.expr import Binary, Const, Unary, Var, evaluate, variables
from charmax.integrals import implicit_solution_for_problem
from charmax.locus import extract_singular_locus, extract_surface, split_component
from charmax.problem import load_problem_bundle

EXAMPLES = ("ode_quadratic", "circular", "burgers_ramp", "burgers_reciprocal")


def bundle(name: str):
    return load_problem_bundle(charmax.problem_path(name))


def solution(name: str):
    b = bundle(name)
    rho_set, sol = implicit_solution_for_problem(b.problem, b.data, b.rho, b.f)
    return b, rho_set, sol


def pipeline(name: str, resolution: int):
    """Full grid pipeline: (bundle, solution, surface, sigma, component,
    domain)."""
    b, _, sol = solution(name)
    surface = extract_surface(sol.F, b.problem.box, resolution)
    sigma = extract_singular_locus(sol.F, surface)
    component = split_component(surface, sigma, sol.gamma_samples)
    dom = maximal_domain(component, sigma)
    return b, sol, surface, sigma, component, dom


# ---------------------------------------------------------------------------
# Closed-form truths for the bundled examples

def true_inside(name: str, q) -> float:
    """Signed closed-form margin: positive inside the maximal domain."""
    if name == "ode_quadratic":
        return 1.0 - q[0]
    if name == "circular":
        t, x = q
        return 1.0 - t * t - x ** 3
    if name == "burgers_ramp":
        return 0.5 - q[0]
    if name == "burgers_reciprocal":
        t, x = q
        return (x + 1.0) ** 2 / 4.0 - t
    raise ValueError(name)


def true_u(name: str, q) -> float:
    if name == "ode_quadratic":
        return 1.0 / (1.0 - q[0])
    if name == "circular":
        t, x = q
        return math.sqrt(1.0 - t * t - x ** 3)
    if name == "burgers_ramp":
        t, x = q
        return -2.0 * x / (1.0 - 2.0 * t)
    if name == "burgers_reciprocal":
        t, x = q
        if t == 0.0:
            return 1.0 / (x + 1.0)
        return (x + 1.0 - math.sqrt((x + 1.0) ** 2 - 4.0 * t)) / (2.0 * t)
    raise ValueError(name)


# ---------------------------------------------------------------------------
# Query-based boundary location

def verdict_transition(problem, data, sol, q_of, lo, hi, steps=60):
    """Bisect the parameter of the inside->not-inside transition of
    contains along a query path q_of(parameter)."""
    v_lo = contains(problem, data, sol, q_of(lo))
    v_hi = contains(problem, data, sol, q_of(hi))
    assert v_lo.kind == "inside", f"expected inside at {lo}, got {v_lo.kind}"
    assert v_hi.kind != "inside", f"expected not-inside at {hi}"
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if contains(problem, data, sol, q_of(mid)).kind == "inside":
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Geometry helpers

def point_segment_distance(p, a, b) -> float:
    p, a, b = map(np.asarray, (p, a, b))
    ab = b - a
    denom = float(np.dot(ab, ab))
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    s = float(np.clip(np.dot(p - a, ab) / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + s * ab)))


def point_polyline_distance(p, line) -> float:
    line = np.asarray(line)
    if len(line) == 1:
        return float(np.linalg.norm(np.asarray(p) - line[0]))
    return min(point_segment_distance(p, a, b)
               for a, b in zip(line[:-1], line[1:]))


# ---------------------------------------------------------------------------
# Random expression generator (deterministic, tame by construction)

def random_expr(rng: np.random.Generator, var_pool, depth: int,
                func_budget: int = 2):
    """Expression sampled the way the parser would build it: no Neg
    directly wrapping a Const, constants kept small."""
    if depth <= 0 or rng.random() < 0.25:
        if rng.random() < 0.4:
            return Const(round(float(rng.uniform(-2.5, 2.5)), 3))
        return Var(str(rng.choice(var_pool)))
    roll = rng.random()
    if roll < 0.62:
        op = str(rng.choice(["+", "-", "*", "/"]))
        return Binary(op, random_expr(rng, var_pool, depth - 1, func_budget),
                      random_expr(rng, var_pool, depth - 1, func_budget))
    if roll < 0.74:
        exponent = Const(float(rng.integers(2, 4)))
        return Binary("^", random_expr(rng, var_pool, depth - 1, func_budget),
                      exponent)
    if roll < 0.86 and func_budget > 0:
        name = str(rng.choice(["exp", "log", "sin", "cos", "sqrt"]))
        return Unary(name, random_expr(rng, var_pool, depth - 1,
                                       func_budget - 1))
    inner = random_expr(rng, var_pool, depth - 1, func_budget)
    if isinstance(inner, Const):
        return Const(-inner.value)
    return Unary("neg", inner)


def fd_pair(rng: np.random.Generator, n: int, step: float = 1e-5,
            max_tries: int = 400):
    """One (expr, var, point) sample at which the central-difference oracle
    is numerically meaningful: finite, bounded values and a bounded
    third-derivative estimate."""
    from charmax.expr import diff

    pool = list(_var_pool(n))
    for _ in range(max_tries):
        e = random_expr(rng, pool, depth=4)
        used = sorted(variables(e))
        if not used:
            continue
        v = str(rng.choice(used))
        point = {name: float(rng.uniform(-2.0, 2.0)) for name in pool}
        try:
            de = diff(e, v)
            samples = {}
            for k in (-2, -1, 0, 1, 2):
                p = dict(point)
                p[v] += k * step
                samples[k] = evaluate(e, p)
            dval = evaluate(de, point)
        except Exception:
            continue
        if not all(np.isfinite(val) and abs(val) < 1e3
                   for val in samples.values()):
            continue
        if not (np.isfinite(dval) and abs(dval) < 1e3):
            continue
        # third-derivative estimate at a coarser step bounds the FD
        # truncation error independently of the tested identity
        third = (samples[2] - 2 * samples[1] + 2 * samples[-1]
                 - samples[-2]) / (2 * step ** 3)
        if not np.isfinite(third) or abs(third) > 1e4:
            continue
        return e, v, point, samples, dval
    raise RuntimeError("generator failed to find a tame sample")


def _var_pool(n: int):
    from charmax.expr import var_names
    return var_names(n)


def central_difference(samples: dict, step: float) -> float:
    return (samples[1] - samples[-1]) / (2.0 * step)
