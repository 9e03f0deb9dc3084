"""Closed forms for 1-D scalar conservation laws u_t + a(u) u_x = 0.

Characteristics are straight lines x = s + g(s) t carrying u = h(s), with
g = a o h.  Where g is locally decreasing, neighboring lines cross at
t*(s) = -1/g'(s); the parametric curve (t*(s), x*(s)) is the envelope of
the line family and bounds the domain where the solution stays
single-valued.  These formulas are independent oracles for the grid
pipeline, and t* = -1/g' itself is validated in the test suite against a
brute-force nearby-line intersection limit.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .expr import EvalDomainError, Expr, Var, diff, evaluate, substitute, variables

SCAN_SAMPLES = 10_000
REFINE_TOL = 1e-12
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class VerticalTangentError(Exception):
    """The envelope parametrization has dt*/ds = 0 at this parameter with
    no removable limit (degenerate envelopes included)."""


@dataclass(frozen=True)
class ConservationLaw:
    a: Expr        # characteristic speed, in u
    h: Expr        # initial data, in x (= x1)
    g: Expr        # a o h, in x
    g_prime: Expr  # dg/dx, symbolic

    @classmethod
    def from_parts(cls, a: Expr, h: Expr) -> "ConservationLaw":
        bad = variables(a) - {"u"}
        if bad:
            raise ValueError(f"speed must depend on u only, found {sorted(bad)}")
        bad = variables(h) - {"x1"}
        if bad:
            raise ValueError(f"initial data must depend on x only, "
                             f"found {sorted(bad)}")
        g = substitute(a, {"u": h})
        return cls(a, h, g, diff(g, "x1"))

    def g_at(self, s: float) -> float:
        return evaluate(self.g, {"x1": float(s)})

    def h_at(self, s: float) -> float:
        return evaluate(self.h, {"x1": float(s)})

    def g_prime_at(self, s: float) -> float:
        return evaluate(self.g_prime, {"x1": float(s)})


@dataclass(frozen=True)
class CharacteristicLine:
    """x(t) = s + speed * t at constant height u."""

    s: float
    speed: float
    u: float

    def x_at(self, t: float) -> float:
        return self.s + self.speed * t


@dataclass
class EnvelopeCurve:
    s: np.ndarray
    t: np.ndarray
    x: np.ndarray

    def __len__(self):
        return len(self.s)

    def to_csv(self, law: ConservationLaw) -> str:
        out = io.StringIO()
        out.write("s,t,x,speed\n")
        for s, t, x in zip(self.s, self.t, self.x):
            try:
                speed = propagation_speed(law, float(s))
                stext = repr(float(speed))
            except (VerticalTangentError, EvalDomainError):
                stext = "nan"
            out.write(f"{float(s)!r},{float(t)!r},{float(x)!r},{stext}\n")
        return out.getvalue()


def characteristic_line(law: ConservationLaw, s: float) -> CharacteristicLine:
    """The straight characteristic through the initial point at parameter s."""
    return CharacteristicLine(float(s), law.g_at(s), law.h_at(s))


def singular_time(law: ConservationLaw, s: float) -> float | None:
    """t*(s) = -1/g'(s) where g'(s) < 0; None where the line never focuses."""
    gp = law.g_prime_at(s)
    if gp < 0.0:
        return -1.0 / gp
    return None


def envelope(law: ConservationLaw, s_range, samples: int) -> EnvelopeCurve:
    """Points (t*(s), x*(s)) with x* = s + g(s) t*, sampled and ordered in s.

    Parameters where t* is undefined are skipped; the curve may be empty.
    """
    lo, hi = float(s_range[0]), float(s_range[1])
    ss, ts, xs = [], [], []
    for s in np.linspace(lo, hi, samples):
        try:
            tstar = singular_time(law, float(s))
        except EvalDomainError:
            continue
        if tstar is None:
            continue
        ss.append(float(s))
        ts.append(tstar)
        xs.append(float(s) + law.g_at(s) * tstar)
    return EnvelopeCurve(np.array(ss), np.array(ts), np.array(xs))


def blowup_time(law: ConservationLaw, s_range) -> float:
    """Infimum of t*(s) over the range; math.inf when t* is nowhere defined.

    A coarse scan locates the minimizing region; golden-section refinement
    tightens it to REFINE_TOL in s.  The returned value never exceeds the
    best scanned sample, so analytically constant t* stays exact.
    """
    lo, hi = float(s_range[0]), float(s_range[1])
    grid = np.linspace(lo, hi, SCAN_SAMPLES)

    def t_at(s: float) -> float:
        try:
            tstar = singular_time(law, s)
        except EvalDomainError:
            return math.inf
        return math.inf if tstar is None else tstar

    values = [t_at(float(s)) for s in grid]
    best = int(np.argmin(values))
    if math.isinf(values[best]):
        return math.inf
    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, len(grid) - 1)]
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = t_at(float(c)), t_at(float(d))
    while abs(b - a) > REFINE_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = t_at(float(c))
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = t_at(float(d))
    return min(values[best], fc, fd)


def propagation_speed(law: ConservationLaw, s: float) -> float:
    """dx/dt along the envelope, (dx*/ds) / (dt*/ds).

    dt*/ds = 0 with dx*/ds != 0, or a degenerate (pointlike) envelope,
    raises VerticalTangentError; an isolated zero of dt*/ds is removable
    and returns the limiting value g(s), which is also the tangency slope.
    """
    tstar = singular_time(law, s)
    if tstar is None:
        raise ValueError(f"no singular time at s = {s}")
    x1 = Var("x1")
    tstar_expr = -1 / law.g_prime
    xstar_expr = x1 + law.g * tstar_expr
    dt_ds = evaluate(diff(tstar_expr, "x1"), {"x1": float(s)})
    dx_ds = evaluate(diff(xstar_expr, "x1"), {"x1": float(s)})
    eps = 1e-12 * (1.0 + abs(dx_ds))
    if abs(dt_ds) > eps:
        return dx_ds / dt_ds
    if abs(dx_ds) > eps:
        raise VerticalTangentError(
            f"dt*/ds = 0 but dx*/ds = {dx_ds:.3e} at s = {s}")
    # both vanish: removable only if dt*/ds has an isolated zero here
    delta = 1e-6 * (1.0 + abs(s))
    probes = []
    for sp in (s - delta, s + delta):
        try:
            probes.append(evaluate(diff(tstar_expr, "x1"), {"x1": sp}))
        except EvalDomainError:
            probes.append(0.0)
    if all(abs(p) <= eps for p in probes):
        raise VerticalTangentError(
            f"envelope is degenerate (a point) near s = {s}")
    return law.g_at(s)
