"""Level-surface discretization and the singular locus.

The zero set of F is discretized over the computational box on a regular
grid: a cell "crosses" when F changes sign among its corner vertices.
Cells get linear patches (marching-squares segments in the plane case,
triangles from a six-tetrahedron cube decomposition in the space case),
and adjacency is shared-facet adjacency between crossing cells.

The singular locus is the subset of the surface where F_u vanishes too.
Cells where both F and F_u change sign seed a damped Newton polish; in the
space case the polished points are then ordered into polylines by
pseudo-arclength continuation along the one-dimensional solution curve.

Splitting off the connected component of the initial set is a pure
flood fill over cell adjacency with singular cells removed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations, product

import numpy as np

from .expr import Expr, diff, evaluate, evaluate_grid, var_names
from .problem import Box

NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50
SIGMA_RESIDUAL = 1e-10
DEGENERATE_RATIO = 1e-6
MIN_RESOLUTION = 16


class ResolutionError(Exception):
    """The grid is too coarse to carry out the requested operation."""


@dataclass
class LevelSurface:
    F: Expr
    box: Box
    resolution: int
    axes: tuple[np.ndarray, ...]       # vertex coordinates per axis
    values: np.ndarray                 # F at vertices
    valid: np.ndarray                  # vertex validity
    crossing: np.ndarray               # cell-shaped bool mask
    cells: np.ndarray                  # (k, dim) crossing-cell indices
    patches: list                      # per crossing cell: (m, 2|3, dim)
    excluded_cells: np.ndarray         # cells dropped for invalid vertices
    _cell_set: frozenset = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def cell_size(self) -> np.ndarray:
        return np.array([ax[1] - ax[0] for ax in self.axes])

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.cell_size))

    @property
    def cell_set(self) -> frozenset:
        if self._cell_set is None:
            self._cell_set = frozenset(map(tuple, self.cells.tolist()))
        return self._cell_set

    def neighbors(self, cell: tuple) -> list[tuple]:
        """Crossing cells sharing a facet with ``cell``."""
        out = []
        for axis in range(self.dim):
            for step in (-1, 1):
                cand = list(cell)
                cand[axis] += step
                cand = tuple(cand)
                if cand in self.cell_set:
                    out.append(cand)
        return out

    def cell_center(self, cell) -> np.ndarray:
        return np.array([0.5 * (ax[i] + ax[i + 1])
                         for ax, i in zip(self.axes, cell)])

    def cell_of(self, point) -> tuple:
        idx = []
        for ax, v in zip(self.axes, point):
            step = ax[1] - ax[0]
            i = int(np.floor((v - ax[0]) / step))
            idx.append(min(max(i, 0), len(ax) - 2))
        return tuple(idx)

    def cells_containing(self, point) -> list[tuple]:
        """All cells whose closed region contains the point (a point on a
        vertex plane belongs to both neighbors)."""
        choices = []
        for ax, v in zip(self.axes, point):
            step = ax[1] - ax[0]
            frac = (v - ax[0]) / step
            i = int(np.floor(frac))
            i = min(max(i, 0), len(ax) - 2)
            opts = {i}
            if abs(frac - round(frac)) < 1e-9:
                j = int(round(frac))
                for cand in (j - 1, j):
                    if 0 <= cand <= len(ax) - 2:
                        opts.add(cand)
            choices.append(sorted(opts))
        return [tuple(c) for c in product(*choices)]


@dataclass
class SingularLocus:
    points: np.ndarray                 # (m, dim) refined points
    degenerate: np.ndarray             # (m,) bool flags
    tangents: np.ndarray               # (m, dim); zeros in the plane case
    polylines: list                    # ordered (k, dim) arrays (space case)
    seed_cells: np.ndarray             # (j, dim) cells with F and F_u crossings
    dropped: int                       # Newton divergences


@dataclass
class SurfaceComponent:
    """Connected set of crossing cells reachable from the initial set
    without touching singular cells."""

    surface: LevelSurface
    cells: np.ndarray                  # (k, dim), lexicographically sorted
    cell_set: frozenset
    gamma_cells: list[tuple]
    sigma_cells: frozenset


# ---------------------------------------------------------------------------
# Surface extraction

def _grid_values(e: Expr, axes, n: int):
    names = var_names(n)
    grids = np.meshgrid(*axes, indexing="ij", sparse=True)
    shape = tuple(len(ax) for ax in axes)
    return evaluate_grid(e, dict(zip(names, grids)), shape=shape)


def _corner_offsets(dim: int):
    return list(product((0, 1), repeat=dim))


def _classify_cells(values: np.ndarray, valid: np.ndarray, dim: int):
    """Masks over cells: all corners valid, and both F signs present
    (a vertex value of exactly zero counts as positive)."""
    cell_shape = tuple(s - 1 for s in values.shape)
    all_ok = np.ones(cell_shape, dtype=bool)
    has_pos = np.zeros(cell_shape, dtype=bool)
    has_neg = np.zeros(cell_shape, dtype=bool)
    for offs in _corner_offsets(dim):
        sl = tuple(slice(1, None) if o else slice(None, -1) for o in offs)
        v = values[sl]
        ok = valid[sl]
        all_ok &= ok
        has_pos |= ok & (v >= 0.0)
        has_neg |= ok & (v < 0.0)
    crossing = all_ok & has_pos & has_neg
    return crossing, all_ok


def _edge_zero(pa, va, pb, vb):
    s = va / (va - vb)
    return tuple(a + s * (b - a) for a, b in zip(pa, pb))


def _square_patches(corner_vals, corner_pts):
    """Marching-squares segments for one cell.

    corner order: 00, 10, 11, 01 walking around the cell; the saddle case
    is disambiguated by the bilinear center value.
    """
    ring = (0, 1, 2, 3)
    signs = [1 if v >= 0 else -1 for v in corner_vals]
    zeros = []
    edges = []
    for i in range(4):
        a, b = ring[i], ring[(i + 1) % 4]
        if signs[a] != signs[b]:
            zeros.append(_edge_zero(corner_pts[a], corner_vals[a],
                                    corner_pts[b], corner_vals[b]))
            edges.append(i)
    if len(zeros) == 2:
        return [(zeros[0], zeros[1])]
    if len(zeros) == 4:
        center = sum(corner_vals) / 4.0
        if (center >= 0) == (signs[0] > 0):
            # corners 00 and 11 join through the center
            return [(zeros[0], zeros[1]), (zeros[2], zeros[3])]
        return [(zeros[3], zeros[0]), (zeros[1], zeros[2])]
    return []


# six-tetrahedron (Kuhn) decomposition of the unit cube: each tet walks
# 0 -> e_s1 -> e_s1+e_s2 -> (1,1,1) for a permutation (s1, s2, s3)
def _kuhn_tets(dim: int = 3):
    tets = []
    for perm in permutations(range(dim)):
        corner = [0] * dim
        path = [tuple(corner)]
        for axis in perm:
            corner[axis] = 1
            path.append(tuple(corner))
        tets.append(tuple(path))
    return tets


_TETS3 = _kuhn_tets(3)


def _tet_triangles(vals, pts):
    """Triangles of the zero set inside one tetrahedron."""
    signs = [1 if v >= 0 else -1 for v in vals]
    pos = [i for i in range(4) if signs[i] > 0]
    negs = [i for i in range(4) if signs[i] < 0]
    if not pos or not negs:
        return []
    if len(pos) == 1 or len(negs) == 1:
        lone = pos[0] if len(pos) == 1 else negs[0]
        others = [i for i in range(4) if i != lone]
        z = [_edge_zero(pts[lone], vals[lone], pts[o], vals[o]) for o in others]
        return [(z[0], z[1], z[2])]
    a, b = pos
    c, d = negs
    q = [_edge_zero(pts[a], vals[a], pts[c], vals[c]),
         _edge_zero(pts[a], vals[a], pts[d], vals[d]),
         _edge_zero(pts[b], vals[b], pts[d], vals[d]),
         _edge_zero(pts[b], vals[b], pts[c], vals[c])]
    return [(q[0], q[1], q[2]), (q[0], q[2], q[3])]


def extract_surface(F: Expr, box: Box, resolution: int) -> LevelSurface:
    """Find all sign-crossing cells of F over the box and patch them.

    Vertices where F fails to evaluate are marked invalid; their incident
    cells are excluded from the surface and reported.
    """
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION}")
    n = box.n
    if n > 1:
        raise NotImplementedError("surface extraction is implemented for "
                                  "n in {0, 1}")
    dim = n + 2
    axes = tuple(np.linspace(lo, hi, resolution + 1) for lo, hi in box.ranges)
    values, valid = _grid_values(F, axes, n)
    crossing, all_ok = _classify_cells(values, valid, dim)
    cells = np.argwhere(crossing)
    excluded = np.argwhere(~all_ok)

    # gather corner values/coordinates for all crossing cells at once
    offsets = _corner_offsets(dim)
    corner_vals = np.stack(
        [values[tuple(cells[:, k] + o[k] for k in range(dim))] for o in offsets],
        axis=1) if len(cells) else np.zeros((0, len(offsets)))
    patches = []
    if dim == 2:
        # reorder corners to walk the square: 00, 10, 11, 01
        ring = [offsets.index(o) for o in ((0, 0), (1, 0), (1, 1), (0, 1))]
        for row, cell in zip(corner_vals, cells):
            pts = [(axes[0][cell[0] + o[0]], axes[1][cell[1] + o[1]])
                   for o in ((0, 0), (1, 0), (1, 1), (0, 1))]
            vals = [row[r] for r in ring]
            segs = _square_patches(vals, pts)
            patches.append(np.array(segs, dtype=float).reshape(-1, 2, 2))
    else:
        index_of = {o: i for i, o in enumerate(offsets)}
        for row, cell in zip(corner_vals, cells):
            coords = {o: (axes[0][cell[0] + o[0]], axes[1][cell[1] + o[1]],
                          axes[2][cell[2] + o[2]]) for o in offsets}
            tris = []
            for tet in _TETS3:
                vals = [row[index_of[o]] for o in tet]
                pts = [coords[o] for o in tet]
                tris.extend(_tet_triangles(vals, pts))
            patches.append(np.array(tris, dtype=float).reshape(-1, 3, 3))

    return LevelSurface(F, box, resolution, axes, values, valid,
                        crossing, cells, patches, excluded)


# ---------------------------------------------------------------------------
# Singular locus

def _damped_newton(res_fn, jac_fn, x0, tol=NEWTON_TOL, maxit=NEWTON_MAXIT):
    """Newton with Armijo halving on |r|^2.  Returns the solution or None."""
    x = np.asarray(x0, dtype=float).copy()
    r = res_fn(x)
    if r is None:
        return None
    for _ in range(maxit):
        nr = float(np.max(np.abs(r)))
        if nr <= tol:
            return x
        J = jac_fn(x)
        if J is None:
            return None
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        base = float(np.dot(r, r))
        lam = 1.0
        while lam > 2.0 ** -24:
            cand = x + lam * step
            rc = res_fn(cand)
            if rc is not None and float(np.dot(rc, rc)) <= (1 - 0.5 * lam) * base:
                x, r = cand, rc
                break
            lam *= 0.5
        else:
            return None
    return x if float(np.max(np.abs(r))) <= tol else None


class _SigmaSystem:
    """Evaluation helpers for the square system (F, F_u) = 0."""

    def __init__(self, F: Expr, n: int):
        self.n = n
        self.names = var_names(n)
        self.F = F
        self.F_u = diff(F, "u")
        self.grad_F = [diff(F, v) for v in self.names]
        self.grad_Fu = [diff(self.F_u, v) for v in self.names]

    def binding(self, point):
        return dict(zip(self.names, (float(v) for v in point)))

    def residual(self, point):
        b = self.binding(point)
        try:
            return np.array([evaluate(self.F, b), evaluate(self.F_u, b)])
        except Exception:
            return None

    def jacobian2(self, point):
        """Full 2 x (n+2) Jacobian of (F, F_u)."""
        b = self.binding(point)
        try:
            return np.array([[evaluate(g, b) for g in self.grad_F],
                             [evaluate(g, b) for g in self.grad_Fu]])
        except Exception:
            return None

    def tangent(self, point):
        """Unit tangent of the solution curve (space case only)."""
        J = self.jacobian2(point)
        if J is None:
            return None
        t = np.cross(J[0], J[1])
        norm = np.linalg.norm(t)
        if norm == 0.0 or not np.isfinite(norm):
            return None
        return t / norm


def _polish_seed(sys: _SigmaSystem, center, box: Box, tol):
    dim = sys.n + 2
    if dim == 2:
        free = [0, 1]
    else:
        t = sys.tangent(center)
        if t is None:
            # fall back to freezing u; the rank check flags degeneracy later
            free = [0, 1]
        else:
            frozen = int(np.argmax(np.abs(t)))
            free = [i for i in range(dim) if i != frozen]

    base = np.asarray(center, dtype=float)

    def embed(xy):
        p = base.copy()
        p[free] = xy
        return p

    def res(xy):
        return sys.residual(embed(xy))

    def jac(xy):
        J = sys.jacobian2(embed(xy))
        return None if J is None else J[:, free]

    sol = _damped_newton(res, jac, base[free], tol)
    if sol is None:
        return None
    point = embed(sol)
    return point if box.contains(point, atol=1e-12) else None


def _is_degenerate(sys: _SigmaSystem, point) -> bool:
    J = sys.jacobian2(point)
    if J is None:
        return True
    sv = np.linalg.svd(J, compute_uv=False)
    return bool(sv[-1] <= DEGENERATE_RATIO * max(sv[0], 1e-300))


def _trace_from(sys: _SigmaSystem, start, direction, box: Box, ds0, tol,
                max_steps):
    """Pseudo-arclength continuation of the (F, F_u) = 0 curve."""
    points = [np.asarray(start, dtype=float)]
    T = direction
    ds = ds0
    for _ in range(max_steps):
        p = points[-1]
        pred = p + ds * T

        def res(q):
            r = sys.residual(q)
            if r is None:
                return None
            return np.array([r[0], r[1], float(np.dot(T, q - pred))])

        def jac(q):
            J = sys.jacobian2(q)
            if J is None:
                return None
            return np.vstack([J, T])

        q = _damped_newton(res, jac, pred, tol, maxit=25)
        if q is None:
            if ds > ds0 / 64:
                ds *= 0.5
                continue
            break
        if not box.contains(q, atol=1e-12):
            break
        Tn = sys.tangent(q)
        if Tn is None:
            points.append(q)
            break
        if np.dot(Tn, T) < 0:
            Tn = -Tn
        T = Tn
        points.append(q)
        if len(points) > 3 and np.linalg.norm(q - points[0]) < 0.6 * ds0:
            points.append(points[0].copy())
            break
        ds = min(ds * 1.3, ds0)
    return points


def extract_singular_locus(F: Expr, surface: LevelSurface,
                           newton_tol: float = NEWTON_TOL) -> SingularLocus:
    """Refine the set {F = 0, F_u = 0} from cells where both sign-change.

    Each seed cell is polished by damped Newton on the square system (in
    the plane case in (t, u); in the space case in the two coordinates
    across the solution curve, with the along-curve coordinate frozen).
    Space-case points are then ordered into polylines by pseudo-arclength
    continuation.  Diverging seeds are dropped and counted.
    """
    n = surface.dim - 2
    sys = _SigmaSystem(F, n)
    fu_vals, fu_ok = _grid_values(sys.F_u, surface.axes, n)
    fu_crossing, _ = _classify_cells(fu_vals, fu_ok, surface.dim)
    seeds_mask = surface.crossing & fu_crossing
    seed_cells = np.argwhere(seeds_mask)

    polished = []
    dropped = 0
    for cell in seed_cells:
        point = _polish_seed(sys, surface.cell_center(cell), surface.box,
                             newton_tol)
        if point is None:
            dropped += 1
        else:
            polished.append(point)

    # deduplicate within one cell diagonal, deterministically
    diag = surface.cell_diagonal
    kept: list[np.ndarray] = []
    for point in sorted(polished, key=lambda p: tuple(p)):
        if all(np.linalg.norm(point - q) > diag for q in kept):
            kept.append(point)

    points = (np.array(kept) if kept
              else np.zeros((0, surface.dim)))
    degenerate = np.array([_is_degenerate(sys, p) for p in kept], dtype=bool)
    tangents = np.zeros_like(points)
    polylines: list[np.ndarray] = []

    if n == 1 and len(kept):
        for i, p in enumerate(kept):
            if degenerate[i]:
                continue
            t = sys.tangent(p)
            if t is not None:
                tangents[i] = t
        visited = np.zeros(len(kept), dtype=bool)
        visited |= degenerate
        max_steps = 40 * surface.resolution
        for i, p in enumerate(kept):
            if visited[i]:
                continue
            t = tangents[i]
            if not np.any(t):
                visited[i] = True
                continue
            fwd = _trace_from(sys, p, t, surface.box, diag, newton_tol,
                              max_steps)
            bwd = _trace_from(sys, p, -t, surface.box, diag, newton_tol,
                              max_steps)
            line = np.array(list(reversed(bwd[1:])) + fwd)
            polylines.append(line)
            # mark polished points swept by this polyline as visited
            if len(line):
                rest = np.nonzero(~visited)[0]
                for j in rest:
                    d = np.min(np.linalg.norm(line - points[j], axis=1))
                    if d <= diag:
                        visited[j] = True
            visited[i] = True

    return SingularLocus(points, degenerate, tangents, polylines,
                         seed_cells, dropped)


# ---------------------------------------------------------------------------
# Component of the initial set

def split_component(surface: LevelSurface, sigma: SingularLocus,
                    gamma) -> SurfaceComponent:
    """Flood-fill the crossing cells from the initial-set cells, with
    singular cells removed first."""
    sigma_cells = set(map(tuple, sigma.seed_cells.tolist()))
    for p in sigma.points:
        sigma_cells.add(surface.cell_of(p))
    for line in sigma.polylines:
        for p in line:
            sigma_cells.add(surface.cell_of(p))

    gamma_cells = []
    for sample in np.asarray(gamma, dtype=float):
        cands = [c for c in surface.cells_containing(sample)
                 if c in surface.cell_set]
        if not cands:
            raise ResolutionError(
                f"initial-set sample {sample.tolist()} lies in no crossing "
                "cell; increase the resolution")
        gamma_cells.extend(cands)

    frontier = [c for c in gamma_cells if c not in sigma_cells]
    if not frontier:
        raise ResolutionError(
            "all initial-set cells are singular at this resolution")
    seen = set(frontier)
    queue = list(dict.fromkeys(frontier))
    head = 0
    while head < len(queue):
        cell = queue[head]
        head += 1
        for nb in surface.neighbors(cell):
            if nb not in seen and nb not in sigma_cells:
                seen.add(nb)
                queue.append(nb)

    cells = np.array(sorted(seen))
    return SurfaceComponent(surface, cells, frozenset(seen),
                            list(dict.fromkeys(gamma_cells)),
                            frozenset(sigma_cells))


# ---------------------------------------------------------------------------
# Diagnostics used by tests and the CLI

def patch_vertices(surface: LevelSurface) -> np.ndarray:
    """All patch vertices as one (m, dim) point cloud."""
    chunks = [p.reshape(-1, surface.dim) for p in surface.patches if p.size]
    if not chunks:
        return np.zeros((0, surface.dim))
    return np.vstack(chunks)


def points_csv(surface: LevelSurface, sigma: SingularLocus,
               with_surface: bool = False) -> str:
    """Point-cloud dump: one row per point with a kind column
    (surface | sigma | sigma-degenerate)."""
    n = surface.dim - 2
    header = ["t", *(f"x{k}" for k in range(1, n + 1)), "u", "kind"]
    lines = [",".join(header)]

    def row(point, kind):
        return ",".join([*(repr(float(v)) for v in point), kind])

    if with_surface:
        for p in patch_vertices(surface):
            lines.append(row(p, "surface"))
    for p, deg in zip(sigma.points, sigma.degenerate):
        lines.append(row(p, "sigma-degenerate" if deg else "sigma"))
    return "\n".join(lines) + "\n"


def fold_discriminant(F: Expr, point, displacement) -> float:
    """Discriminant of the local quadratic model of F in u, evaluated at
    pi(point) + displacement with u frozen at the point's u.

    A sign change of this quantity across the projected singular point is
    the fold test: the two u-branches of the surface merge there.
    """
    n = len(point) - 2
    names = var_names(n)
    F_u = diff(F, "u")
    F_uu = diff(F_u, "u")
    base = list(point)
    for k, d in enumerate(displacement):
        base[k] += d
    b = dict(zip(names, (float(v) for v in base)))
    fv = evaluate(F, b)
    fu = evaluate(F_u, b)
    fuu = evaluate(F_uu, b)
    return fu * fu - 2.0 * fv * fuu
