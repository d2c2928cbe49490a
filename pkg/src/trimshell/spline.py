"""B-spline and NURBS evaluation with derivatives, surface geometry and frames."""
from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from . import jets

MAX_ORDER = 4


class DomainError(ValueError):
    """Parametric coordinate outside the valid knot range."""


class SingularParametrizationError(ValueError):
    """Tangent vectors of the surface map are (nearly) linearly dependent."""


@dataclass(frozen=True)
class KnotVector:
    knots: np.ndarray
    degree: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be non-negative")
        if knots.ndim != 1 or len(knots) < p + 2:
            raise ValueError("need at least p+2 knots")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        _, counts = np.unique(knots, return_counts=True)
        if counts.max() > p + 1:
            raise ValueError("knot multiplicity exceeds p+1")

    @classmethod
    def uniform(cls, a: float, b: float, nspans: int, degree: int) -> "KnotVector":
        inner = np.linspace(a, b, nspans + 1)
        knots = np.concatenate([[a] * degree, inner, [b] * degree])
        return cls(knots, degree)

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def lower(self) -> float:
        return self.knots[self.degree]

    @property
    def upper(self) -> float:
        return self.knots[self.n_basis]

    def spans(self) -> np.ndarray:
        """Knot indices ``s`` of all non-empty spans ``[u_s, u_{s+1})``."""
        p, n = self.degree, self.n_basis
        s = np.arange(p, n)
        return s[self.knots[s + 1] > self.knots[s]]

    def greville(self) -> np.ndarray:
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        k = self.knots
        return np.array([k[i + 1 : i + p + 1].mean() for i in range(self.n_basis)])


def find_span(kv: KnotVector, u) -> np.ndarray:
    """Knot span index ``s`` with ``u`` in ``[u_s, u_{s+1})``.

    The last non-empty span is closed on the right so the full parameter range
    is evaluable.
    """
    u = np.asarray(u, dtype=float)
    lo, hi = kv.lower, kv.upper
    tol = 1e-12 * max(1.0, hi - lo)
    if np.any(u < lo - tol) or np.any(u > hi + tol):
        raise DomainError(f"parameter outside [{lo}, {hi}]")
    knots = kv.knots
    s = np.searchsorted(knots, u, side="right") - 1
    last = kv.spans()[-1]
    first = kv.spans()[0]
    return np.clip(s, first, last)


def eval_basis(kv: KnotVector, u, k: int = 0, span=None) -> np.ndarray:
    """Nonzero basis functions and derivatives up to order ``k``.

    Returns an array of shape ``(..., k+1, p+1)``; entry ``[..., r, j]`` is the
    ``r``-th derivative of ``N_{s-p+j}`` at ``u``.  Orders above ``p`` are zero.
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    s = find_span(kv, u) if span is None else np.atleast_1d(span)
    p = kv.degree
    U = kv.knots
    npts = u.shape[0]

    ndu = np.zeros((p + 1, p + 1, npts))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    for j in range(1, p + 1):
        left[j] = u - U[s + 1 - j]
        right[j] = U[s + j] - u
        saved = np.zeros(npts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((npts, k + 1, p + 1))
    ders[:, 0, :] = ndu[:, p, :].T
    kk = min(k, p)
    for r in range(p + 1):
        a = np.zeros((2, p + 1, npts))
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for q in range(1, kk + 1):
            d = np.zeros(npts)
            rk, pk = r - q, p - q
            if r >= q:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = q - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, q] = -a[s1, q - 1] / ndu[pk + 1, r]
                d = d + a[s2, q] * ndu[r, pk]
            ders[:, q, r] = d
            s1, s2 = s2, s1
    for q in range(1, kk + 1):
        ders[:, q, :] *= factorial(p) / factorial(p - q)
    return ders[0] if scalar else ders


def basis_matrix(kv: KnotVector, u, k: int = 0) -> np.ndarray:
    """Dense matrix ``M[i, A] = N_A^{(k)}(u_i)`` over all basis functions."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    s = find_span(kv, u)
    vals = eval_basis(kv, u, k, span=s)[:, k, :]
    out = np.zeros((len(u), kv.n_basis))
    for j in range(kv.degree + 1):
        out[np.arange(len(u)), s - kv.degree + j] = vals[:, j]
    return out


def rational_derivatives(numer: np.ndarray, weight: np.ndarray, k: int) -> np.ndarray:
    """Quotient-rule recursion for ``R = A / W`` with bivariate derivatives.

    ``numer[..., a, b]`` and ``weight[..., a, b]`` hold derivatives up to total
    order ``k``; ``weight`` broadcasts against ``numer``.
    """
    out = np.zeros(np.broadcast_shapes(numer.shape, weight.shape))
    w0 = weight[..., 0, 0]
    for tot in range(k + 1):
        for a in range(tot, -1, -1):
            b = tot - a
            val = numer[..., a, b].copy()
            for i in range(a + 1):
                for j in range(b + 1):
                    if i == 0 and j == 0:
                        continue
                    val = val - comb(a, i) * comb(b, j) * weight[..., i, j] * out[..., a - i, b - j]
            out[..., a, b] = val / w0
    return out


@dataclass(frozen=True)
class TensorBasis:
    """Tensor-product B-spline basis with optional rational weights.

    Basis functions are numbered ``A = i * n2 + j`` with ``i`` the index in the
    first parametric direction.
    """

    kv_u: KnotVector
    kv_v: KnotVector
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.kv_u.n_basis, self.kv_v.n_basis):
                raise ValueError("weight grid does not match the basis")
            if np.any(w <= 0):
                raise ValueError("rational weights must be positive")
            object.__setattr__(self, "weights", w)

    @property
    def shape(self) -> tuple:
        return (self.kv_u.n_basis, self.kv_v.n_basis)

    @property
    def n_basis(self) -> int:
        return self.kv_u.n_basis * self.kv_v.n_basis

    @property
    def degrees(self) -> tuple:
        return (self.kv_u.degree, self.kv_v.degree)

    @property
    def n_local(self) -> int:
        return (self.kv_u.degree + 1) * (self.kv_v.degree + 1)

    @property
    def is_rational(self) -> bool:
        return self.weights is not None

    @property
    def bounds(self) -> tuple:
        return (self.kv_u.lower, self.kv_u.upper, self.kv_v.lower, self.kv_v.upper)

    def span_of(self, xi) -> np.ndarray:
        xi = np.atleast_2d(xi)
        return np.stack([find_span(self.kv_u, xi[:, 0]), find_span(self.kv_v, xi[:, 1])], axis=1)

    def local_indices(self, spans: np.ndarray) -> np.ndarray:
        """Global indices of the ``(p1+1)(p2+1)`` functions active on each span."""
        spans = np.atleast_2d(spans)
        p1, p2 = self.degrees
        n2 = self.kv_v.n_basis
        i = spans[:, 0:1] - p1 + np.arange(p1 + 1)
        j = spans[:, 1:2] - p2 + np.arange(p2 + 1)
        return (i[:, :, None] * n2 + j[:, None, :]).reshape(len(spans), -1)

    def eval(self, xi, k: int = 0, spans=None):
        """Active functions and their partial derivatives.

        Returns
        -------
        idx : (N, nb) int
            Global function indices.
        ders : (N, nb, k+1, k+1)
            ``ders[n, A, a, b] = D^(a,b) R_A(xi_n)`` for ``a + b <= k`` (other
            entries are zero).
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if spans is None:
            spans = self.span_of(xi)
        bu = eval_basis(self.kv_u, xi[:, 0], k, span=spans[:, 0])
        bv = eval_basis(self.kv_v, xi[:, 1], k, span=spans[:, 1])
        npts = xi.shape[0]
        p1, p2 = self.degrees
        # (N, i, j, a, b)
        prod = np.einsum("nai,nbj->nijab", bu, bv)
        for a in range(k + 1):
            prod[..., a, k - a + 1 :] = 0.0
        ders = prod.reshape(npts, (p1 + 1) * (p2 + 1), k + 1, k + 1)
        idx = self.local_indices(spans)
        if self.weights is not None:
            w = self.weights.reshape(-1)[idx]
            numer = ders * w[:, :, None, None]
            wsum = numer.sum(axis=1, keepdims=True)
            ders = rational_derivatives(numer, wsum, k)
        return idx, ders


@dataclass(frozen=True)
class SplineSurface:
    """Spline surface ``S(u, v) = sum_A R_A(u, v) C_A`` in R^3."""

    basis: TensorBasis
    control: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.control, dtype=float)
        if c.shape != self.basis.shape + (3,):
            raise ValueError("control net does not match the basis")
        object.__setattr__(self, "control", c)

    def derivatives(self, xi, k: int = 0) -> np.ndarray:
        """Partial derivatives ``(N, k+1, k+1, 3)`` of the map."""
        idx, ders = self.basis.eval(xi, k)
        pts = self.control.reshape(-1, 3)[idx]
        return np.einsum("nAab,nAc->nabc", ders, pts)

    def __call__(self, xi) -> np.ndarray:
        return self.derivatives(xi, 0)[:, 0, 0, :]


def interpolate_control_net(basis: TensorBasis, func) -> np.ndarray:
    """Control values interpolating ``func`` at the Greville abscissae.

    ``func(u, v)`` takes meshgrid arrays and returns values with a trailing
    component axis (or scalars).  The basis weights are ignored, so for
    rational bases pass homogeneous data.
    """
    gu = basis.kv_u.greville()
    gv = basis.kv_v.greville()
    Mu = basis_matrix(basis.kv_u, gu)
    Mv = basis_matrix(basis.kv_v, gv)
    U, V = np.meshgrid(gu, gv, indexing="ij")
    vals = np.asarray(func(U, V), dtype=float)
    tmp = np.linalg.solve(Mu, vals.reshape(len(gu), -1)).reshape(vals.shape)
    tmp = np.moveaxis(tmp, 1, 0)
    out = np.linalg.solve(Mv, tmp.reshape(len(gv), -1)).reshape(tmp.shape)
    return np.moveaxis(out, 0, 1)


@dataclass
class SurfaceFrame:
    """Differential geometry of the surface at one parametric point."""

    x: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    normal: np.ndarray
    projector: np.ndarray
    weingarten: np.ndarray
    area_jacobian: float


@dataclass
class GeometryJets:
    """Jets of the surface geometry at a batch of points.

    ``degree`` is the jet degree of the position; tangent quantities carry one
    degree less and the Weingarten map two less.
    """

    degree: int
    x: np.ndarray          # (N, 3, nc_K)
    jplus: np.ndarray      # (N, 2, 3, nc_{K-1}) pseudo-inverse of the Jacobian
    normal: np.ndarray     # (N, 3, nc_{K-1})
    projector: np.ndarray  # (N, 3, 3, nc_{K-1})
    weingarten: np.ndarray | None  # (N, 3, 3, nc_{K-2})
    area: np.ndarray       # (N,) sqrt(det G)
    tangents: np.ndarray   # (N, 3, 2) parametric tangents at the point

    def value(self, name: str) -> np.ndarray:
        return jets.constant(getattr(self, name))


def geometry_jets(map_derivs: np.ndarray, degree: int) -> GeometryJets:
    """Differential geometry jets from map derivatives ``(N, K+1, K+1, 3)``."""
    if degree < 1:
        raise ValueError("geometry jets need at least first derivatives")
    x = jets.from_derivatives(np.moveaxis(map_derivs, -1, 1), degree)
    a1 = jets.deriv(x, 0)
    a2 = jets.deriv(x, 1)
    d1 = degree - 1
    g11 = jets.mul(a1, a1, d1).sum(axis=1)
    g12 = jets.mul(a1, a2, d1).sum(axis=1)
    g22 = jets.mul(a2, a2, d1).sum(axis=1)
    det = jets.mul(g11, g22, d1) - jets.mul(g12, g12, d1)
    det0 = det[:, 0]
    t1 = a1[..., 0]
    t2 = a2[..., 0]
    cross0 = np.cross(t1, t2)
    if np.any(np.linalg.norm(cross0, axis=1) < 1e-14 * np.linalg.norm(t1, axis=1) * np.linalg.norm(t2, axis=1)):
        raise SingularParametrizationError("degenerate tangents")
    inv_det = jets.reciprocal(det, d1)
    # G^{-1} = [[g22, -g12], [-g12, g11]] / det
    ginv = np.stack(
        [
            np.stack([jets.mul(g22, inv_det, d1), jets.mul(-g12, inv_det, d1)], axis=1),
            np.stack([jets.mul(-g12, inv_det, d1), jets.mul(g11, inv_det, d1)], axis=1),
        ],
        axis=1,
    )
    jac = np.stack([a1, a2], axis=1)  # (N, 2, 3, nc)
    jplus = jets.mul(ginv[:, :, :, None, :], jac[:, None, :, :, :], d1).sum(axis=2)
    cross = np.stack(
        [
            jets.mul(a1[:, 1], a2[:, 2], d1) - jets.mul(a1[:, 2], a2[:, 1], d1),
            jets.mul(a1[:, 2], a2[:, 0], d1) - jets.mul(a1[:, 0], a2[:, 2], d1),
            jets.mul(a1[:, 0], a2[:, 1], d1) - jets.mul(a1[:, 1], a2[:, 0], d1),
        ],
        axis=1,
    )
    inv_norm = jets.power(det, -0.5, d1)
    normal = jets.mul(cross, inv_norm[:, None, :], d1)
    eye = np.zeros((1, 3, 3, jets.ncoef(d1)))
    eye[0, :, :, 0] = np.eye(3)
    proj = eye - jets.mul(normal[:, :, None, :], normal[:, None, :, :], d1)
    weing = jets.surface_derivative(normal, jplus) if d1 >= 1 else None
    return GeometryJets(
        degree=degree,
        x=x,
        jplus=jplus,
        normal=normal,
        projector=proj,
        weingarten=weing,
        area=np.sqrt(det0),
        tangents=np.stack([t1, t2], axis=2),
    )


def surface_frame(surface: SplineSurface, xi) -> SurfaceFrame:
    """Position, tangents, normal, projector and Weingarten map at ``xi``."""
    xi = np.asarray(xi, dtype=float).reshape(1, 2)
    geo = geometry_jets(surface.derivatives(xi, 2), 2)
    H = geo.value("weingarten")[0]
    P = geo.value("projector")[0]
    return SurfaceFrame(
        x=geo.value("x")[0],
        t1=geo.tangents[0, :, 0],
        t2=geo.tangents[0, :, 1],
        normal=geo.value("normal")[0],
        projector=P,
        weingarten=P @ H @ P,
        area_jacobian=float(geo.area[0]),
    )


def boundary_triad(frame: SurfaceFrame, tangent) -> tuple:
    """Orthonormal boundary triad ``(t, n_boundary, n_surface)``.

    The tangent is projected onto the tangent plane first; the co-normal is
    ``n_boundary = n_surface x t``, so it points out of the surface when the
    tangent runs with the visible domain on its right (seen from the normal).
    """
    t = frame.projector @ np.asarray(tangent, dtype=float)
    nt = np.linalg.norm(t)
    if nt == 0.0:
        raise ValueError("zero boundary tangent")
    t = t / nt
    nb = np.cross(frame.normal, t)
    nb /= np.linalg.norm(nb)
    return t, nb, frame.normal


def invert_point(surface: SplineSurface, x, xi0, tol: float = 1e-14, maxiter: int = 50) -> np.ndarray:
    """Parameters ``xi`` with ``S(xi) = x`` by Gauss-Newton iterations.

    Iterates are clipped to the parameter rectangle; raises ``ValueError``
    if the iteration does not converge.
    """
    x = np.asarray(x, dtype=float)
    xi = np.array(xi0, dtype=float)
    r0, r1, s0, s1 = surface.basis.bounds
    scale = max(1.0, float(np.linalg.norm(x)))
    for _ in range(maxiter):
        d = surface.derivatives(xi[None], 1)[0]
        res = d[0, 0] - x
        if np.linalg.norm(res) <= tol * scale:
            return xi
        J = np.stack([d[1, 0], d[0, 1]], axis=1)
        step = np.linalg.lstsq(J, -res, rcond=None)[0]
        xi = np.clip(xi + step, [r0, s0], [r1, s1])
        if np.linalg.norm(step) <= 1e-16 * max(1.0, float(np.linalg.norm(xi))):
            break
    if np.linalg.norm(surface(xi[None])[0] - x) > 1e-9 * scale:
        raise ValueError("point inversion did not converge")
    return xi
