"""Higher-order quadrature on trimmed knot spans.

Each knot span is processed as a *cell*: a smooth map from the reference square
``[0, 1]^2`` into parameter space.  Trimming functions are applied one after
another.  For every cell the trimming function is pulled back to the reference
square, replaced by its tensor Lagrange interpolant of order ``p``, sampled on
a dense grid to detect the cut topology (refining quad-tree style when the
topology is not admissible), and the zero isoline is reconstructed by Newton
iterations.  The visible part is decomposed into curved quadrilaterals and
triangles whose Coons (transfinite) maps carry tensor Gauss rules.  Cells
surviving one trimming function become the input cells of the next one, so
corners where several trimming curves meet are handled by nesting maps.
"""
import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.ndimage import label
from scipy.optimize import brentq

from .trimming import TrimmedPatch, composite_levelset, sample_grid_size, span_bounds

UNCUT_INSIDE = "uncut-inside"
UNCUT_OUTSIDE = "uncut-outside"
CASE1 = "case1"
CASE2 = "case2"
INVALID = "invalid"

NEWTON_TOL = 1e-11
NEWTON_MAXITER = 50


class QuadratureError(RuntimeError):
    """Unresolvable cut topology or failed reconstruction in a knot span."""


class ReconstructionError(RuntimeError):
    """Newton reconstruction of the zero isoline failed inside a cell."""


class DecompositionError(RuntimeError):
    """A sub-cell map has a non-positive Jacobian."""


def gauss01(n: int):
    """Gauss-Legendre points and weights on ``[0, 1]``."""
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def tensor_gauss01(n1: int, n2: int | None = None):
    n2 = n1 if n2 is None else n2
    x1, w1 = gauss01(n1)
    x2, w2 = gauss01(n2)
    X = np.stack(np.meshgrid(x1, x2, indexing="ij"), axis=-1).reshape(-1, 2)
    return X, np.outer(w1, w2).reshape(-1)


# --- curves in a reference square ------------------------------------------


class Segment:
    """Straight segment from ``a`` to ``b``."""

    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return self.a + t * (self.b - self.a)

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.b - self.a, t.shape + (2,)).copy()


class LagrangeCurve:
    """Lagrange curve through equally spaced (in ``t``) nodes."""

    def __init__(self, nodes):
        self.nodes = np.asarray(nodes, dtype=float)
        self.order = len(self.nodes) - 1
        self.tk = np.linspace(0.0, 1.0, self.order + 1)

    def __call__(self, t):
        L, _ = lagrange_basis_1d(self.tk, np.asarray(t, dtype=float))
        return L @ self.nodes

    def deriv(self, t):
        _, dL = lagrange_basis_1d(self.tk, np.asarray(t, dtype=float))
        return dL @ self.nodes


class SubCurve:
    """Restriction of a curve to ``[t0, t1]`` reparametrized to ``[0, 1]``."""

    def __init__(self, curve, t0: float, t1: float):
        self.curve, self.t0, self.t1 = curve, t0, t1

    def __call__(self, t):
        return self.curve(self.t0 + (self.t1 - self.t0) * np.asarray(t, dtype=float))

    def deriv(self, t):
        return (self.t1 - self.t0) * self.curve.deriv(self.t0 + (self.t1 - self.t0) * np.asarray(t, dtype=float))


def lagrange_basis_1d(nodes: np.ndarray, x: np.ndarray):
    """Lagrange basis values and first derivatives, shape ``(..., n)``."""
    x = np.asarray(x, dtype=float)
    n = len(nodes)
    diff = x[..., None] - nodes  # (..., n)
    L = np.ones(x.shape + (n,))
    dL = np.zeros(x.shape + (n,))
    for k in range(n):
        others = [m for m in range(n) if m != k]
        denom = np.prod(nodes[k] - nodes[others])
        num = np.ones(x.shape)
        dnum = np.zeros(x.shape)
        for m in others:
            dnum = dnum * diff[..., m] + num
            num = num * diff[..., m]
        L[..., k] = num / denom
        dL[..., k] = dnum / denom
    return L, dL


# --- maps from the reference square ---------------------------------------


class RectMap:
    """Affine map of ``[0,1]^2`` onto the box ``[r0,r1] x [s0,s1]``."""

    def __init__(self, r0, r1, s0, s1):
        self.lo = np.array([r0, s0], dtype=float)
        self.size = np.array([r1 - r0, s1 - s0], dtype=float)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = self.lo + x * self.size
        jac = np.broadcast_to(np.diag(self.size), x.shape[:-1] + (2, 2)).copy()
        return pts, jac


class ReflectMap:
    """``(u, v) -> (1 - u, v)``; used to flip cell orientation."""

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = np.stack([1.0 - x[..., 0], x[..., 1]], axis=-1)
        jac = np.broadcast_to(np.diag([-1.0, 1.0]), x.shape[:-1] + (2, 2)).copy()
        return pts, jac


class CoonsMap:
    """Bilinearly blended transfinite map with four boundary curves.

    ``bottom(u)``, ``top(u)`` run in ``u``; ``left(v)``, ``right(v)`` in ``v``.
    A constant ``bottom`` curve collapses the square into a triangle.
    """

    def __init__(self, bottom, right, top, left):
        self.b, self.r, self.t, self.l = bottom, right, top, left
        self.P00 = np.asarray(left(0.0))
        self.P10 = np.asarray(right(0.0))
        self.P01 = np.asarray(left(1.0))
        self.P11 = np.asarray(right(1.0))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u = x[..., 0:1]
        v = x[..., 1:2]
        cb, ct = self.b(x[..., 0]), self.t(x[..., 0])
        cl, cr = self.l(x[..., 1]), self.r(x[..., 1])
        db, dt = self.b.deriv(x[..., 0]), self.t.deriv(x[..., 0])
        dl, dr = self.l.deriv(x[..., 1]), self.r.deriv(x[..., 1])
        P00, P10, P01, P11 = self.P00, self.P10, self.P01, self.P11
        pts = (
            (1 - v) * cb + v * ct + (1 - u) * cl + u * cr
            - ((1 - u) * (1 - v) * P00 + u * (1 - v) * P10 + (1 - u) * v * P01 + u * v * P11)
        )
        mu = (1 - v) * db + v * dt - cl + cr - (-(1 - v) * P00 + (1 - v) * P10 - v * P01 + v * P11)
        mv = -cb + ct + (1 - u) * dl + u * dr - (-(1 - u) * P00 - u * P10 + (1 - u) * P01 + u * P11)
        jac = np.stack([mu, mv], axis=-1)
        return pts, jac


class ComposedMap:
    """``outer(inner(x))``."""

    def __init__(self, outer, inner):
        self.outer, self.inner = outer, inner

    def __call__(self, x):
        y, J1 = self.inner(x)
        z, J2 = self.outer(y)
        return z, J2 @ J1


def triangle_map(apex, curve):
    """Curved triangle with straight sides from ``apex`` to the curve ends."""
    apex = np.asarray(apex, dtype=float)
    return CoonsMap(Segment(apex, apex), Segment(apex, curve(1.0)), curve, Segment(apex, curve(0.0)))


# --- Lagrange interpolation of the level set -------------------------------


@dataclass
class LagrangeCell:
    """Tensor Lagrange interpolant of a level set on the reference square."""

    order: int
    nodes: np.ndarray   # (p+1,) equally spaced reference nodes per direction
    values: np.ndarray  # (p+1, p+1) nodal values

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        Lu, _ = lagrange_basis_1d(self.nodes, x[..., 0])
        Lv, _ = lagrange_basis_1d(self.nodes, x[..., 1])
        return np.einsum("...i,ij,...j->...", Lu, self.values, Lv)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        Lu, dLu = lagrange_basis_1d(self.nodes, x[..., 0])
        Lv, dLv = lagrange_basis_1d(self.nodes, x[..., 1])
        gu = np.einsum("...i,ij,...j->...", dLu, self.values, Lv)
        gv = np.einsum("...i,ij,...j->...", Lu, self.values, dLv)
        return np.stack([gu, gv], axis=-1)


def interpolate_levelset(phi, cell_map, p: int) -> LagrangeCell:
    """Order-``p`` Lagrange interpolant of ``phi`` pulled back through ``cell_map``.

    ``cell_map`` may be a box ``(r0, r1, s0, s1)`` or any reference-square map.
    """
    if isinstance(cell_map, tuple):
        cell_map = RectMap(*cell_map)
    t = np.linspace(0.0, 1.0, p + 1)
    X = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
    pts, _ = cell_map(X)
    return LagrangeCell(order=p, nodes=t, values=np.asarray(phi(pts), dtype=float))


# --- topology ----------------------------------------------------------------

# reference edges: 0 bottom (v=0), 1 right (u=1), 2 top (v=1), 3 left (u=0)
_EDGE_CORNERS = {0: ((0, 0), (1, 0)), 1: ((1, 0), (1, 1)), 2: ((0, 1), (1, 1)), 3: ((0, 0), (0, 1))}
_CASE1_CORNER = {(0, 1): (1, 0), (1, 2): (1, 1), (2, 3): (0, 1), (0, 3): (0, 0)}


def _edge_samples(values: np.ndarray, e: int) -> np.ndarray:
    if e == 0:
        return values[:, 0]
    if e == 1:
        return values[-1, :]
    if e == 2:
        return values[:, -1]
    return values[0, :]


def zero_tolerance(values: np.ndarray) -> float:
    return 1e-12 * max(float(np.abs(values).max()), 1e-300)


def detect_topology(values: np.ndarray, tol: float | None = None):
    """Classify the sign pattern of sampled level-set values on a cell.

    Parameters
    ----------
    values : (m, m) array
        Samples on an equally spaced grid, ``values[iu, iv]``.

    Returns
    -------
    topology : str
        One of ``uncut-inside``, ``uncut-outside``, ``case1``, ``case2``,
        ``invalid``.
    cut_edges : tuple
        Indices of the cut reference edges (0 bottom, 1 right, 2 top, 3 left).
    """
    values = np.asarray(values, dtype=float)
    if tol is None:
        tol = zero_tolerance(values)
    if np.all(values <= tol):
        return UNCUT_OUTSIDE, ()
    if np.all(values >= -tol):
        return UNCUT_INSIDE, ()
    pos = values > -tol
    cut = []
    for e in range(4):
        s = _edge_samples(pos, e)
        changes = np.count_nonzero(s[1:] != s[:-1])
        if changes > 1:
            return INVALID, ()
        if changes == 1:
            cut.append(e)
    if len(cut) != 2:
        return INVALID, tuple(cut)
    if label(pos)[1] != 1 or label(~pos)[1] != 1:
        return INVALID, tuple(cut)
    if cut in ([0, 2], [1, 3]):
        return CASE2, tuple(cut)
    return CASE1, tuple(cut)


# --- reconstruction ------------------------------------------------------------


def _edge_point(e: int, t: float) -> np.ndarray:
    (a0, a1), (b0, b1) = _EDGE_CORNERS[e]
    return np.array([a0 + t * (b0 - a0), a1 + t * (b1 - a1)], dtype=float)


def _edge_root(cell: LagrangeCell, e: int, samples: np.ndarray, tol: float) -> np.ndarray:
    pos = samples > -tol
    k = int(np.nonzero(pos[1:] != pos[:-1])[0][0])
    m = len(samples)
    t0, t1 = k / (m - 1), (k + 1) / (m - 1)

    def f(t):
        return float(cell(_edge_point(e, t)))

    f0, f1 = f(t0), f(t1)
    if f0 == 0.0:
        return _edge_point(e, t0)
    if f1 == 0.0:
        return _edge_point(e, t1)
    if f0 * f1 > 0:
        # sign change only within the zero tolerance: take the smaller value
        return _edge_point(e, t0 if abs(f0) < abs(f1) else t1)
    return _edge_point(e, brentq(f, t0, t1, xtol=1e-15, rtol=1e-15, maxiter=200))


def reconstruct_interface(cell: LagrangeCell, topology: str, cut_edges, samples=None) -> LagrangeCurve:
    """Reconstruct the zero isoline of the interpolant across a cut cell.

    The end points are the roots on the two cut edges; the ``p - 1`` interior
    nodes are found by Newton iterations along the gradient of the
    interpolant, starting from equally spaced points of the chord.
    """
    if topology not in (CASE1, CASE2):
        raise ValueError("interface reconstruction needs a cut topology")
    if samples is None:
        m = sample_grid_size(cell.order)
        g = np.linspace(0.0, 1.0, m)
        samples = cell(np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1))
    tol = zero_tolerance(samples)
    e1, e2 = cut_edges
    A = _edge_root(cell, e1, _edge_samples(samples, e1), tol)
    B = _edge_root(cell, e2, _edge_samples(samples, e2), tol)
    p = cell.order
    nodes = [A]
    for k in range(1, p):
        x = A + (k / p) * (B - A)
        for _ in range(NEWTON_MAXITER):
            val = float(cell(x))
            if abs(val) <= 1e-15 * max(1.0, float(np.abs(samples).max())):
                break
            g = cell.gradient(x)
            gg = float(g @ g)
            if gg == 0.0:
                raise ReconstructionError("vanishing level-set gradient")
            step = -val * g / gg
            damp = 1.0
            while np.any(x + damp * step < -1e-12) or np.any(x + damp * step > 1 + 1e-12):
                damp *= 0.5
                if damp < 1e-6:
                    raise ReconstructionError("Newton iterate leaves the cell")
            x = x + damp * step
            if np.linalg.norm(damp * step) < 1e-16:
                break
        if abs(float(cell(x))) > NEWTON_TOL:
            raise ReconstructionError("Newton iteration did not converge")
        nodes.append(x)
    nodes.append(B)
    return LagrangeCurve(np.array(nodes))


# --- decomposition ---------------------------------------------------------------


@dataclass
class IntegrationCell:
    """Sub-cell given by a map of the reference square (in its parent cell)."""

    map: object
    inside: bool
    shape: str  # "quad" or "tri"


def _corner(c) -> np.ndarray:
    return np.asarray(c, dtype=float)


def decompose(curve, topology: str, cut_edges, corner_inside: dict) -> list:
    """Split a cut reference cell along ``curve``.

    ``corner_inside`` maps each reference corner ``(0|1, 0|1)`` to whether it
    lies on the visible side.  Case 1 yields one curved triangle on the corner
    side and four triangles fanned from the opposite corner on the pentagon
    side; case 2 yields two curved quadrilaterals.
    """
    cells = []
    if topology == CASE2:
        if tuple(cut_edges) == (1, 3):
            # curve must run left -> right
            if curve(0.0)[0] > curve(1.0)[0]:
                curve = SubCurve(curve, 1.0, 0.0)
            A, B = curve(0.0), curve(1.0)
            lower = CoonsMap(Segment((0, 0), (1, 0)), Segment((1, 0), B), curve, Segment((0, 0), A))
            upper = CoonsMap(curve, Segment(B, (1, 1)), Segment((0, 1), (1, 1)), Segment(A, (0, 1)))
            lo_in = corner_inside[(0, 0)] if (0, 0) in corner_inside else corner_inside[(1, 0)]
            cells.append(IntegrationCell(lower, lo_in, "quad"))
            cells.append(IntegrationCell(upper, not lo_in, "quad"))
        else:
            if curve(0.0)[1] > curve(1.0)[1]:
                curve = SubCurve(curve, 1.0, 0.0)
            A, B = curve(0.0), curve(1.0)
            left = CoonsMap(Segment((0, 0), A), curve, Segment((0, 1), B), Segment((0, 0), (0, 1)))
            right = CoonsMap(Segment(A, (1, 0)), Segment((1, 0), (1, 1)), Segment(B, (1, 1)), curve)
            left_in = corner_inside[(0, 0)] if (0, 0) in corner_inside else corner_inside[(0, 1)]
            cells.append(IntegrationCell(left, left_in, "quad"))
            cells.append(IntegrationCell(right, not left_in, "quad"))
        return cells

    key = tuple(sorted(cut_edges))
    C = _CASE1_CORNER[key]
    O = (1 - C[0], 1 - C[1])
    c_in = corner_inside[C]
    A, B = curve(0.0), curve(1.0)
    cells.append(IntegrationCell(triangle_map(_corner(C), curve), c_in, "tri"))
    # corners adjacent to C, matched to the curve end on their edge
    adj = [(1 - C[0], C[1]), (C[0], 1 - C[1])]

    def on_edge_of(P, X):
        # X adjacent corner; P lies on edge C-X if it shares the fixed coordinate
        if X[0] != C[0]:
            return abs(P[1] - C[1]) < 1e-12
        return abs(P[0] - C[0]) < 1e-12

    XA = adj[0] if on_edge_of(A, adj[0]) else adj[1]
    XB = adj[1] if XA == adj[0] else adj[0]
    Ov = _corner(O)
    cells.append(IntegrationCell(triangle_map(Ov, SubCurve(curve, 0.0, 0.5)), not c_in, "tri"))
    cells.append(IntegrationCell(triangle_map(Ov, SubCurve(curve, 0.5, 1.0)), not c_in, "tri"))
    cells.append(IntegrationCell(triangle_map(Ov, Segment(_corner(XA), A)), not c_in, "tri"))
    cells.append(IntegrationCell(triangle_map(Ov, Segment(B, _corner(XB))), not c_in, "tri"))
    return cells


def map_quadrature(cell_map, g: int, parent=None):
    """Gauss rule of order ``g`` mapped through ``cell_map`` (and ``parent``).

    Orientation-reversing maps are flipped automatically.  Returns points,
    weights (including all Jacobians) and the possibly flipped map.
    """
    X, W = tensor_gauss01(g)
    _, J = cell_map(X)
    det = np.linalg.det(J)
    if np.sum(det) < 0:
        cell_map = ComposedMap(cell_map, ReflectMap())
        _, J = cell_map(X)
        det = np.linalg.det(J)
    full = cell_map if parent is None else ComposedMap(parent, cell_map)
    pts, Jf = full(X)
    detf = np.linalg.det(Jf)
    scale = np.abs(detf).max()
    if np.any(det <= 0) or np.any(detf <= -1e-14 * scale):
        raise DecompositionError("non-positive Jacobian in sub-cell")
    return pts, W * np.abs(detf), cell_map


# --- mesh ---------------------------------------------------------------------


@dataclass
class IntegrationMesh:
    """Quadrature points of the visible domain in parameter space.

    Interior points carry parameter-space weights.  Boundary points carry the
    parameter-space curve tangent ``dxi/dt`` (oriented so the co-normal points
    out of the visible domain) and the weight in ``t``; physical arc-length
    weights follow as ``|J dxi/dt| * weight``.
    """

    xi: np.ndarray
    weights: np.ndarray
    spans: np.ndarray
    bxi: np.ndarray
    btangent: np.ndarray
    bweights: np.ndarray
    btags: np.ndarray
    bspans: np.ndarray
    span_class: dict = field(default_factory=dict)
    curves: list = field(default_factory=list)

    @property
    def n_interior(self) -> int:
        return len(self.weights)

    @property
    def n_boundary(self) -> int:
        return len(self.bweights)

    def boundary_mask(self, tag: str) -> np.ndarray:
        return self.btags == tag

    @property
    def tags(self) -> list:
        return sorted(set(self.btags.tolist()))

    def parameter_area(self) -> float:
        return float(self.weights.sum())

    def parameter_length(self, tag: str | None = None) -> float:
        sel = np.ones(self.n_boundary, bool) if tag is None else self.boundary_mask(tag)
        return float((np.linalg.norm(self.btangent[sel], axis=1) * self.bweights[sel]).sum())

    def dump_csv(self, path) -> None:
        """Write points as CSV with columns span_i, span_j, r, s, weight, tag."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["span_i", "span_j", "r", "s", "weight", "tag"])
            for (i, j), (r, s), wt in zip(self.spans, self.xi, self.weights):
                w.writerow([i, j, repr(r), repr(s), repr(wt), "interior"])
            bw = np.linalg.norm(self.btangent, axis=1) * self.bweights
            for (i, j), (r, s), wt, tag in zip(self.bspans, self.bxi, bw, self.btags):
                w.writerow([i, j, repr(r), repr(s), repr(wt), tag])


@dataclass
class _BoundaryPiece:
    map: object       # reference-square map of the owning cell
    curve: object     # curve in that reference square
    index: int        # level-set index, or -1 for patch edges
    tag: str
    outward: np.ndarray | None = None  # fixed parameter-space outward direction


def _cut_cell(cell_map, phi, p, q, depth, max_depth, span):
    """Cut one cell by one trimming function; returns inside maps and pieces."""
    lc = interpolate_levelset(phi, cell_map, p)
    m = sample_grid_size(p, q)
    g = np.linspace(0.0, 1.0, m)
    samples = lc(np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1))
    tol = zero_tolerance(samples)
    topo, cut = detect_topology(samples, tol)
    if topo == UNCUT_OUTSIDE:
        return [], []
    if topo == UNCUT_INSIDE:
        pieces = []
        for e in range(4):
            if np.all(np.abs(_edge_samples(samples, e)) <= tol):
                a, b = _EDGE_CORNERS[e]
                pieces.append(Segment(a, b))
        return [cell_map], [(cell_map, c) for c in pieces]
    try:
        if topo == INVALID:
            raise ReconstructionError("invalid topology")
        curve = reconstruct_interface(lc, topo, cut, samples)
        pos = samples > -tol
        corners = {(0, 0): pos[0, 0], (1, 0): pos[-1, 0], (0, 1): pos[0, -1], (1, 1): pos[-1, -1]}
        # drop corners sitting on the curve when deciding sides
        corner_inside = {}
        for c, v in corners.items():
            if abs(samples[-1 if c[0] else 0, -1 if c[1] else 0]) > tol:
                corner_inside[c] = bool(v)
        if topo == CASE1:
            C = _CASE1_CORNER[tuple(sorted(cut))]
            if C not in corner_inside:
                corner_inside[C] = bool(corners[C])
        subcells = decompose(curve, topo, cut, corner_inside)
        # validate both sides so the refinement decision does not depend on
        # which side is visible (the leaves then tile the parent exactly)
        inside = []
        for sc in subcells:
            _, _, fixed = map_quadrature(sc.map, p + 1)
            if sc.inside:
                inside.append(ComposedMap(cell_map, fixed))
        return inside, [(cell_map, curve)]
    except (ReconstructionError, DecompositionError) as exc:
        if depth >= max_depth:
            raise QuadratureError(f"cannot resolve cut topology in knot span {span}: {exc}") from None
        inside, pieces = [], []
        for a in (0.0, 0.5):
            for b in (0.0, 0.5):
                child = ComposedMap(cell_map, RectMap(a, a + 0.5, b, b + 0.5))
                ci, cp = _cut_cell(child, phi, p, q, depth + 1, max_depth, span)
                inside += ci
                pieces += cp
        return inside, pieces


def refine_and_resolve(phi, cell_bounds, p: int, q: int = 3, max_depth: int = 4):
    """Resolve one cell into visible sub-cell maps, refining when needed."""
    return _cut_cell(RectMap(*cell_bounds), phi, p, q, 0, max_depth, cell_bounds)


def _piece_points(piece: _BoundaryPiece, t: np.ndarray):
    c = piece.curve(t)
    dc = piece.curve.deriv(t)
    pts, J = piece.map(c)
    return pts, np.einsum("...ij,...j->...i", J, dc)


def _clip_intervals(piece, later, npts: int) -> list:
    """Sub-intervals of ``[0, 1]`` where every later level set is non-negative."""
    if not later:
        return [(0.0, 1.0)]
    t = np.linspace(0.0, 1.0, npts)
    breaks = {0.0, 1.0}
    for ls in later:
        vals = ls(_piece_points(piece, t)[0])
        for k in range(npts - 1):
            if (vals[k] < 0) != (vals[k + 1] < 0):
                f = lambda tt, ls=ls: float(ls(_piece_points(piece, np.array([tt]))[0])[0])
                fa, fb = f(t[k]), f(t[k + 1])
                if fa == 0.0 or fb == 0.0 or fa * fb > 0:
                    breaks.add(t[k] if abs(fa) < abs(fb) else t[k + 1])
                else:
                    breaks.add(brentq(f, t[k], t[k + 1], xtol=1e-15, rtol=1e-15))
    b = sorted(breaks)
    out = []
    for t0, t1 in zip(b[:-1], b[1:]):
        if t1 - t0 < 1e-14:
            continue
        mid = _piece_points(piece, np.array([0.5 * (t0 + t1)]))[0]
        if all(ls(mid)[0] >= 0 for ls in later):
            out.append((t0, t1))
    return out


def build_integration_mesh(
    patch: TrimmedPatch, p: int | None = None, q: int = 3, g: int | None = None, max_depth: int = 4
) -> IntegrationMesh:
    """Quadrature rules for all visible knot spans and all boundary curves.

    Parameters
    ----------
    patch : TrimmedPatch
    p : int, optional
        Order of the level-set interpolation (default: max basis degree).
    q : int
        Refinement parameter of the sign-detection grid.
    g : int, optional
        Gauss points per direction (default ``p + 1``).
    """
    basis = patch.basis
    if p is None:
        p = max(basis.degrees)
    if g is None:
        g = p + 1
    Xg, Wg = tensor_gauss01(g)
    tg, wg = gauss01(g)
    r_lo, r_hi, s_lo, s_hi = basis.bounds
    spans_u = basis.kv_u.spans()
    spans_v = basis.kv_v.spans()
    xi_l, w_l, sp_l = [], [], []
    bxi_l, bt_l, bw_l, btag_l, bsp_l = [], [], [], [], []
    span_class = {}
    curves = []
    levelsets = patch.levelsets

    for i in spans_u:
        for j in spans_v:
            span = (int(i), int(j))
            box = span_bounds(patch, span)
            span_area = (box[1] - box[0]) * (box[3] - box[2])
            root = RectMap(*box)
            cells = [root]
            pieces = []
            cut = False
            for k, ls in enumerate(levelsets):
                new_cells = []
                for cmap in cells:
                    ci, cp = _cut_cell(cmap, ls, p, q, 0, max_depth, span)
                    if not (len(ci) == 1 and ci[0] is cmap):
                        cut = True
                    new_cells += ci
                    pieces += [_BoundaryPiece(m_, c_, k, ls.name) for m_, c_ in cp]
                cells = new_cells
                if not cells:
                    break
            if not cells:
                span_class[span] = "outside"
                continue
            # interior rules
            if not cut:
                pts, J = root(Xg)
                pts_list, w_list = [pts], [Wg * span_area]
            else:
                pts_list, w_list = [], []
                for cmap in cells:
                    pts, J = cmap(Xg)
                    det = np.linalg.det(J)
                    w = Wg * det
                    if w.sum() < 1e-14 * span_area:
                        continue
                    if np.any(det < 0):
                        raise QuadratureError(f"negative Jacobian in knot span {span}")
                    pts_list.append(pts)
                    w_list.append(w)
            area = sum(float(w.sum()) for w in w_list)
            if area < 1e-12 * span_area:
                span_class[span] = "outside"
                continue
            span_class[span] = "cut" if cut else "inside"
            pts = np.concatenate(pts_list)
            xi_l.append(pts)
            w_l.append(np.concatenate(w_list))
            sp_l.append(np.tile(span, (len(pts), 1)))
            # patch edges
            for tag, fixed, val, outward in (
                ("edge:r0", 0, r_lo, (-1.0, 0.0)),
                ("edge:r1", 0, r_hi, (1.0, 0.0)),
                ("edge:s0", 1, s_lo, (0.0, -1.0)),
                ("edge:s1", 1, s_hi, (0.0, 1.0)),
            ):
                lo, hi = (box[0], box[1]) if fixed == 1 else (box[2], box[3])
                if (box[0] if fixed == 0 else box[2]) != val and (box[1] if fixed == 0 else box[3]) != val:
                    continue
                a = np.array([val, lo]) if fixed == 0 else np.array([lo, val])
                b = np.array([val, hi]) if fixed == 0 else np.array([hi, val])
                pieces.append(_BoundaryPiece(RectMap(0.0, 1.0, 0.0, 1.0), Segment(a, b), -1, tag, np.array(outward)))
            # boundary rules
            for piece in pieces:
                later = levelsets[piece.index + 1 :] if piece.index >= 0 else levelsets
                for t0, t1 in _clip_intervals(piece, later, 4 * p + 1):
                    t = t0 + (t1 - t0) * tg
                    pts, dxi = _piece_points(piece, t)
                    w = (t1 - t0) * wg
                    if piece.index >= 0:
                        grad = levelsets[piece.index].gradient(pts)
                    else:
                        grad = -np.broadcast_to(piece.outward, pts.shape)
                    conormal = np.stack([-dxi[:, 1], dxi[:, 0]], axis=1)
                    if np.sum(np.einsum("ij,ij->i", grad, conormal)) > 0:
                        dxi = -dxi
                        pts, dxi, w = pts[::-1], dxi[::-1], w[::-1]
                    if np.sum(np.linalg.norm(dxi, axis=1) * w) <= 0:
                        continue
                    bxi_l.append(pts)
                    bt_l.append(dxi)
                    bw_l.append(w)
                    btag_l += [piece.tag] * len(w)
                    bsp_l.append(np.tile(span, (len(w), 1)))
                    tt = np.linspace(t0, t1, 9)
                    curves.append((piece.tag, _piece_points(piece, tt)[0]))

    def cat(lst, shape):
        return np.concatenate(lst) if lst else np.zeros(shape)

    return IntegrationMesh(
        xi=cat(xi_l, (0, 2)),
        weights=cat(w_l, (0,)),
        spans=cat(sp_l, (0, 2)).astype(int),
        bxi=cat(bxi_l, (0, 2)),
        btangent=cat(bt_l, (0, 2)),
        bweights=cat(bw_l, (0,)),
        btags=np.array(btag_l, dtype=object) if btag_l else np.zeros(0, dtype=object),
        bspans=cat(bsp_l, (0, 2)).astype(int),
        span_class=span_class,
        curves=curves,
    )


def visible_points_ok(patch: TrimmedPatch, mesh: IntegrationMesh, tol: float = 1e-10) -> bool:
    """All interior points satisfy ``composite phi >= -tol``."""
    if not patch.levelsets or mesh.n_interior == 0:
        return True
    return bool(np.all(composite_levelset(patch, mesh.xi)[0] >= -tol))
