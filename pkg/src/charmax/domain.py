"""Projection of the surface component to base space and point queries.

The component of the initial set projects to a mask of base-space cells,
which is the computed maximal domain relative to the box.  Its boundary is
assembled from Newton-polished singular-locus projections plus cell-edge
segments where the component leaves the window.

Point queries do not use the grid at all: they continue the root of
F(t, x, u) = 0 along a path from the initial set to the query point by
predictor-corrector Newton steps.  The query answers "outside" as soon as
|F_u| falls below the singular threshold, which is where the implicit
function theorem stops guaranteeing a single-valued branch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .expr import EvalDomainError, Expr, evaluate, var_names
from .integrals import ImplicitSolution
from .locus import SurfaceComponent
from .problem import InitialData, Problem

SOLVE_TOL = 1e-12
SOLVE_MAXIT = 50
SINGULAR_FACTOR = 1e-6


class ProjectionError(Exception):
    """Two surface sheets project onto one base cell: the projection is not
    injective on the component, i.e. the resolution failed."""


class NoConvergenceError(Exception):
    """Newton in u failed to converge."""


class PathLeftWindowError(Exception):
    """The continuation corrector diverged while F_u was still healthy:
    the path left the region where the surface is tracked (box too small
    or the path crosses a set where F is undefined)."""


@dataclass
class SolveResult:
    u: float
    f_u: float
    residual: float
    iterations: int


@dataclass
class Verdict:
    kind: str                  # "inside" | "outside" | "boundary"
    u: float | None = None     # continued solution value, for inside
    f_u: float | None = None
    at: tuple | None = None    # where the verdict was decided

    def __str__(self):
        if self.kind == "inside":
            return f"inside {self.u!r}"
        return self.kind


@dataclass
class BoundaryPolyline:
    kind: str                  # "fold" (sigma projection) | "window"
    points: np.ndarray         # (m, base_dim)


@dataclass
class MaximalDomain:
    resolution: int
    axes: tuple[np.ndarray, ...]      # base-space vertex coordinates
    mask: np.ndarray                  # bool over base cells
    boundary: list[BoundaryPolyline]
    base_cells: list[tuple]           # projections of the initial-set cells

    @property
    def base_dim(self) -> int:
        return len(self.axes)

    @property
    def cell_area(self) -> float:
        return float(np.prod([ax[1] - ax[0] for ax in self.axes]))

    def mask_area(self) -> float:
        return self.cell_area * int(np.count_nonzero(self.mask))

    def contains_cell(self, base_point) -> bool:
        idx = []
        for ax, v in zip(self.axes, base_point):
            step = ax[1] - ax[0]
            i = int(np.floor((v - ax[0]) / step))
            if not 0 <= i <= len(ax) - 2:
                return False
            idx.append(i)
        return bool(self.mask[tuple(idx)])

    def to_json(self) -> str:
        rows = []
        flat = self.mask.reshape(self.mask.shape[0], -1)
        for row in flat:
            runs = []
            start = None
            for j, v in enumerate(row.tolist() + [False]):
                if v and start is None:
                    start = j
                elif not v and start is not None:
                    runs.append([start, j - start])
                    start = None
            rows.append(runs)
        boundary_pts = []
        for line in self.boundary:
            boundary_pts.extend([[float(c) for c in p] for p in line.points])
        return json.dumps({
            "resolution": self.resolution,
            "mask": {"rows": rows},
            "boundary": boundary_pts,
        }, sort_keys=True)


# ---------------------------------------------------------------------------
# Projection

def maximal_domain(component: SurfaceComponent,
                   sigma=None) -> MaximalDomain:
    """Project the component cells to base space and assemble the boundary.

    When the singular locus is passed in, its Newton-polished projections
    become the fold part of the boundary.  Also checks, cell by cell, that
    the component carries exactly one u-branch over every masked base cell
    (the projection restricted to the component must be injective); two
    branches raise ProjectionError.
    """
    if len(component.cells) == 0:
        raise ValueError("component is empty")
    surface = component.surface
    dim = surface.dim
    base_axes = surface.axes[:-1]
    cell_shape = tuple(len(ax) - 1 for ax in base_axes)

    columns: dict[tuple, list[int]] = {}
    for cell in component.cells:
        base = tuple(int(v) for v in cell[:-1])
        columns.setdefault(base, []).append(int(cell[-1]))
    mask = np.zeros(cell_shape, dtype=bool)
    for base, ius in columns.items():
        ius.sort()
        if ius[-1] - ius[0] + 1 != len(set(ius)):
            raise ProjectionError(
                f"component projects two u-branches onto base cell {base}; "
                "resolution too coarse to separate sheets")
        mask[base] = True

    gamma_base = list(dict.fromkeys(
        tuple(int(v) for v in c[:-1]) for c in component.gamma_cells))
    for base in gamma_base:
        if not mask[base]:
            raise ProjectionError(
                f"initial-set base cell {base} is not masked")

    _check_mask_connected(mask, gamma_base)
    boundary = _assemble_boundary(component, mask, base_axes)
    dom = MaximalDomain(surface.resolution, base_axes, mask, boundary,
                        gamma_base)
    if sigma is not None:
        _attach_sigma_boundary(dom, component, sigma)
    return dom


def _check_mask_connected(mask: np.ndarray, seeds: list[tuple]):
    seen = set(seeds)
    queue = list(seeds)
    head = 0
    shape = mask.shape
    while head < len(queue):
        cell = queue[head]
        head += 1
        for axis in range(mask.ndim):
            for step in (-1, 1):
                cand = list(cell)
                cand[axis] += step
                if not 0 <= cand[axis] < shape[axis]:
                    continue
                cand = tuple(cand)
                if cand not in seen and mask[cand]:
                    seen.add(cand)
                    queue.append(cand)
    if len(seen) != int(np.count_nonzero(mask)):
        raise ProjectionError("projected mask is not facet-connected")


def _assemble_boundary(component: SurfaceComponent, mask, base_axes):
    """Fold boundary from sigma projections; window boundary from mask
    outline edges not explained by a singular cell."""
    surface = component.surface
    boundary: list[BoundaryPolyline] = []
    sigma_base = {tuple(int(v) for v in c[:-1]) for c in component.sigma_cells}

    base_dim = len(base_axes)
    outline: list[tuple] = []
    for base in np.argwhere(mask):
        base = tuple(int(v) for v in base)
        for axis in range(base_dim):
            for step in (-1, 1):
                nb = list(base)
                nb[axis] += step
                inside_window = 0 <= nb[axis] < mask.shape[axis]
                if inside_window and mask[tuple(nb)]:
                    continue
                if inside_window and tuple(nb) in sigma_base:
                    continue  # fold side; covered by sigma projections
                outline.append((base, axis, step))
    for line in _chain_outline(outline, base_axes):
        boundary.append(BoundaryPolyline("window", line))
    return boundary


def _chain_outline(outline, base_axes):
    """Stitch outline edges into ordered polylines at cell-edge accuracy.

    In the 1-D base case the outline is isolated interval endpoints, each
    reported as its own single-point polyline.  Pinch vertices (degree
    above two) end a chain and start another.
    """
    if len(base_axes) == 1:
        pts = sorted({(float(base_axes[0][base[0] + (1 if step > 0 else 0)]),)
                      for base, step in ((b, s) for b, _, s in outline)})
        return [np.array([p]) for p in pts]

    def corner(idx):
        return (float(base_axes[0][idx[0]]), float(base_axes[1][idx[1]]))

    edges = set()
    for base, axis, step in outline:
        other = 1 - axis
        fixed = base[axis] + (1 if step > 0 else 0)
        a = [0, 0]
        a[axis] = fixed
        a[other] = base[other]
        b = [0, 0]
        b[axis] = fixed
        b[other] = base[other] + 1
        edges.add((tuple(a), tuple(b)))

    by_vertex: dict[tuple, list] = {}
    for e in edges:
        for v in e:
            by_vertex.setdefault(v, []).append(e)

    lines = []
    unused = set(edges)
    for start_edge in sorted(edges):
        if start_edge not in unused:
            continue
        unused.discard(start_edge)
        chain = list(start_edge)
        for grow_at_end in (True, False):
            while True:
                tip = chain[-1] if grow_at_end else chain[0]
                if len(by_vertex.get(tip, [])) != 2:
                    break  # open end or pinch vertex
                nxt = [e for e in by_vertex[tip] if e in unused]
                if len(nxt) != 1:
                    break
                e = nxt[0]
                unused.discard(e)
                other_v = e[0] if e[1] == tip else e[1]
                if grow_at_end:
                    chain.append(other_v)
                else:
                    chain.insert(0, other_v)
        lines.append(np.array([corner(v) for v in chain]))
    return lines


def _attach_sigma_boundary(dom: MaximalDomain, component: SurfaceComponent,
                           sigma) -> MaximalDomain:
    """Attach projected sigma polylines/points near the component closure
    as fold boundary."""
    surface = component.surface
    near = component.sigma_cells
    fold_lines = []
    for line in sigma.polylines:
        keep = [p for p in line if surface.cell_of(p) in near
                or any(nb in component.cell_set
                       for nb in surface.neighbors(surface.cell_of(p)))]
        if keep:
            fold_lines.append(np.array([p[:-1] for p in keep]))
    if not fold_lines and len(sigma.points):
        pts = [p[:-1] for p in sigma.points
               if surface.cell_of(p) in near]
        if pts:
            fold_lines.append(np.array(pts))
    dom.boundary = ([BoundaryPolyline("fold", l) for l in fold_lines]
                    + dom.boundary)
    return dom


# ---------------------------------------------------------------------------
# Newton in one unknown

def solve_u(F: Expr, t: float, x, seed: float, F_u: Expr | None = None,
            tol: float = SOLVE_TOL, maxit: int = SOLVE_MAXIT) -> SolveResult:
    """Damped Newton for F(t, x, u) = 0 in u from the given seed."""
    from .expr import diff  # local import to keep module load light
    x = np.atleast_1d(np.asarray(x, dtype=float)) if x is not None else np.zeros(0)
    n = len(x)
    if F_u is None:
        F_u = diff(F, "u")
    names = var_names(n)
    binding = dict(zip(names, [float(t), *x.tolist(), float(seed)]))

    def residual(u):
        binding["u"] = u
        return evaluate(F, binding)

    u = float(seed)
    try:
        r = residual(u)
    except EvalDomainError as err:
        raise NoConvergenceError(f"F undefined at the seed: {err}") from err
    for it in range(maxit):
        if abs(r) <= tol:
            fu = evaluate(F_u, binding)
            return SolveResult(u, fu, abs(r), it)
        try:
            fu = evaluate(F_u, binding)
        except EvalDomainError as err:
            raise NoConvergenceError(str(err)) from err
        if fu == 0.0 or not np.isfinite(fu):
            raise NoConvergenceError(f"F_u = {fu} during Newton")
        step = -r / fu
        lam = 1.0
        while lam > 2.0 ** -24:
            try:
                rc = residual(u + lam * step)
            except EvalDomainError:
                lam *= 0.5
                continue
            if abs(rc) <= (1 - 0.5 * lam) * abs(r) or abs(rc) <= tol:
                u = u + lam * step
                r = rc
                break
            lam *= 0.5
        else:
            raise NoConvergenceError("Newton line search stalled")
    raise NoConvergenceError(
        f"no convergence in {maxit} iterations (|F| = {abs(r):.3e})")


# ---------------------------------------------------------------------------
# Continuation query

@dataclass
class ContinuationParams:
    singular_factor: float = SINGULAR_FACTOR
    newton_tol: float = SOLVE_TOL
    corrector_maxit: int = 8
    initial_fraction: float = 1.0 / 16.0   # of the path length
    max_fraction: float = 1.0 / 8.0
    min_fraction: float = 1e-12
    boundary_fraction: float = 1e-3        # "within the final step" window


def _grad_norm(sol: ImplicitSolution, binding) -> float:
    total = 0.0
    for g in sol.gradient:
        total += evaluate(g, binding) ** 2
    return float(np.sqrt(total))


def _singular_threshold(sol, binding, params) -> float:
    return params.singular_factor * (1.0 + _grad_norm(sol, binding))


def _corrector(sol: ImplicitSolution, names, point, u, params):
    """Newton in u at a fixed base point.  Returns (u, f_u, ok)."""
    binding = dict(zip(names, [*point, u]))

    def f_at(uu):
        binding["u"] = uu
        return evaluate(sol.F, binding)

    try:
        r = f_at(u)
    except EvalDomainError:
        return u, None, False
    for _ in range(params.corrector_maxit):
        try:
            fu = evaluate(sol.F_u, binding)
        except EvalDomainError:
            return u, None, False
        if abs(r) <= params.newton_tol:
            return binding["u"], fu, True
        if fu == 0.0 or not np.isfinite(fu):
            return binding["u"], fu, False
        try:
            r_new = f_at(binding["u"] - r / fu)
        except EvalDomainError:
            return binding["u"], fu, False
        r = r_new
    try:
        fu = evaluate(sol.F_u, binding)
    except EvalDomainError:
        fu = None
    return binding["u"], fu, abs(r) <= params.newton_tol


def nearest_base_point(data: InitialData, q) -> tuple[np.ndarray, float]:
    """The closest initial-set base point (0, s*) to the query."""
    if data.n == 0:
        u0 = evaluate(data.h, {})
        return np.zeros(1), u0
    lo, hi = data.interval
    s = min(max(float(q[1]), lo), hi)
    u0 = evaluate(data.h, {"x1": s})
    return np.array([0.0, s]), u0


def contains(problem: Problem, data: InitialData, sol: ImplicitSolution, q,
             domain: MaximalDomain | None = None,
             params: ContinuationParams | None = None,
             base_point: float | None = None) -> Verdict:
    """Classify a base-space query point by continuation from the initial
    set; for inside points the continued u is the value of the maximally
    extended single-valued solution.

    base_point overrides the choice of s* (n = 1 only), which is useful
    for path-independence checks.
    """
    params = params or ContinuationParams()
    n = problem.n
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if len(q) != n + 1:
        raise ValueError(f"query point must have {n + 1} coordinates")
    face = problem.box.ranges[:n + 1]
    for v, (lo, hi) in zip(q, face):
        if not lo <= v <= hi:
            raise ValueError(
                f"query point {q.tolist()} is outside the (t, x) face of "
                f"the box")

    if base_point is not None and n >= 1:
        lo, hi = data.interval
        s = min(max(float(base_point), lo), hi)
        start = np.array([0.0, s])
        u0 = evaluate(data.h, {"x1": s})
    else:
        start, u0 = nearest_base_point(data, q)

    try:
        return _march(problem, sol, [start, q], u0, params)
    except PathLeftWindowError:
        if domain is None:
            raise
        waypoints = _staircase(domain, start, q)
        if waypoints is None:
            raise
        return _march(problem, sol, waypoints, u0, params)


def _march(problem, sol, waypoints, u0, params) -> Verdict:
    names = var_names(problem.n)
    pts = [np.asarray(w, dtype=float) for w in waypoints]
    legs = [np.linalg.norm(b - a) for a, b in zip(pts, pts[1:])]
    total = float(sum(legs))
    if total == 0.0:
        u, fu, ok = _corrector(sol, names, pts[-1].tolist(), u0, params)
        binding = dict(zip(names, [*pts[-1].tolist(), u]))
        if ok and abs(fu) >= _singular_threshold(sol, binding, params):
            return Verdict("inside", u, fu, tuple(pts[-1]))
        return Verdict("boundary", None, fu, tuple(pts[-1]))

    def at(s: float) -> np.ndarray:
        acc = 0.0
        for a, b, L in zip(pts, pts[1:], legs):
            if s <= acc + L or L == 0.0:
                frac = 0.0 if L == 0.0 else (s - acc) / L
                return a + frac * (b - a)
            acc += L
        return pts[-1]

    base_binding = dict(zip(names, [*pts[0].tolist(), u0]))
    fu_sign = 1.0 if evaluate(sol.F_u, base_binding) >= 0 else -1.0

    h = total * params.initial_fraction
    h_max = total * params.max_fraction
    h_min = total * params.min_fraction
    s_cur = 0.0
    u = u0
    while s_cur < total:
        s_next = min(s_cur + h, total)
        point = at(s_next)
        u_new, fu, ok = _corrector(sol, names, point.tolist(), u, params)
        healthy = False
        if ok and fu is not None:
            binding = dict(zip(names, [*point.tolist(), u_new]))
            # crossing the singular locus on the branch is either |F_u|
            # fading out or F_u flipping sign between step points
            healthy = (abs(fu) >= _singular_threshold(sol, binding, params)
                       and fu * fu_sign > 0)
        if healthy:
            u = u_new
            s_cur = s_next
            h = min(h * 1.4, h_max)
            continue
        if h > h_min:
            h *= 0.5
            continue
        # the branch stops being trackable inside (s_cur, s_next]:
        # localize the onset and judge it by the surviving |F_u|
        s_onset, fu_good, grad_scale = _refine_singular_onset(
            sol, names, at, s_cur, s_next, u, fu_sign, params)
        relaxed = np.sqrt(params.singular_factor) * grad_scale
        if abs(fu_good) <= relaxed:
            if total - s_onset <= params.boundary_fraction * total:
                return Verdict("boundary", None, fu_good, tuple(at(s_onset)))
            return Verdict("outside", None, fu_good, tuple(at(s_onset)))
        raise PathLeftWindowError(
            f"corrector diverged at {at(s_onset).tolist()} with healthy "
            f"F_u = {fu_good:.3e}; box too small or F undefined along the path")
    binding = dict(zip(names, [*pts[-1].tolist(), u]))
    fu = evaluate(sol.F_u, binding)
    if abs(fu) < _singular_threshold(sol, binding, params):
        return Verdict("boundary", None, fu, tuple(pts[-1]))
    return Verdict("inside", u, fu, tuple(pts[-1]))


def _refine_singular_onset(sol, names, at, s_good, s_bad, u_good, fu_sign,
                           params):
    """Bisect the path for the first parameter where the branch stops being
    trackable (corrector failure, F_u below the singular threshold, or an
    F_u sign flip).

    Returns (onset parameter, |F_u| at the last trackable point, gradient
    scale there): at a genuine fold the surviving F_u shrinks with the
    bisection window, while at a mere tracking failure it stays O(1).
    """
    u = u_good
    point = at(s_good)
    _, fu_good, _ = _corrector(sol, names, point.tolist(), u, params)
    binding = dict(zip(names, [*point.tolist(), u]))
    grad_scale = 1.0 + _grad_norm(sol, binding)
    if fu_good is None:
        fu_good = evaluate(sol.F_u, binding)
    for _ in range(60):
        mid = 0.5 * (s_good + s_bad)
        point = at(mid)
        u_new, fu, ok = _corrector(sol, names, point.tolist(), u, params)
        if ok and fu is not None and fu * fu_sign > 0:
            binding = dict(zip(names, [*point.tolist(), u_new]))
            if abs(fu) >= _singular_threshold(sol, binding, params):
                s_good = mid
                u = u_new
                fu_good = fu
                grad_scale = 1.0 + _grad_norm(sol, binding)
                continue
        s_bad = mid
    return s_bad, fu_good, grad_scale


def _staircase(domain: MaximalDomain, start, goal):
    """Cell-center waypoints through the mask from start to goal (BFS)."""
    def cell_of(p):
        idx = []
        for ax, v in zip(domain.axes, p):
            step = ax[1] - ax[0]
            i = int(np.floor((v - ax[0]) / step))
            idx.append(min(max(i, 0), len(ax) - 2))
        return tuple(idx)

    def center(cell):
        return np.array([0.5 * (ax[i] + ax[i + 1])
                         for ax, i in zip(domain.axes, cell)])

    src, dst = cell_of(start), cell_of(goal)
    if not domain.mask[src] or not domain.mask[dst]:
        return None
    prev = {src: None}
    queue = [src]
    head = 0
    while head < len(queue):
        cell = queue[head]
        head += 1
        if cell == dst:
            break
        for axis in range(domain.mask.ndim):
            for step in (-1, 1):
                cand = list(cell)
                cand[axis] += step
                if not 0 <= cand[axis] < domain.mask.shape[axis]:
                    continue
                cand = tuple(cand)
                if cand not in prev and domain.mask[cand]:
                    prev[cand] = cell
                    queue.append(cand)
    if dst not in prev:
        return None
    path = [np.asarray(goal, dtype=float)]
    cell = dst
    while cell is not None:
        path.append(center(cell))
        cell = prev[cell]
    path.append(np.asarray(start, dtype=float))
    return list(reversed(path))
