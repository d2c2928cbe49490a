"""Linear Kirchhoff-Love shells in tangential differential calculus.

All surface operators act on jets (see :mod:`trimshell.jets`): the directional
surface gradient of a field is ``D_j F = sum_a dF/dxi_a * J+_{a j}`` with the
pseudo-inverse ``J+ = G^{-1} J^T`` of the surface Jacobian.  Repeated
application yields exact higher derivatives, which the strong-form residual
(fourth derivatives) and the boundary tractions (third derivatives) need.

Conventions
-----------
* ``grad[..., i, j] = D_j u_i`` (directional surface gradient).
* Membrane strain ``eps_M = sym(P grad P)``; bending strain
  ``eps_B = -P (n_k D_j D_l u_k) P`` (symmetrized).
* ``sigma(eps) = 2 mu eps + lam tr(eps) P`` with the plane-stress constants
  ``mu = E / (2 (1 + nu))`` and ``lam = E nu / (1 - nu^2)``.
* Effective normal force ``n_eff = t sigma(eps_M)``, moment
  ``m = t^3 / 12 sigma(eps_B)``, physical normal force ``n_real = n_eff + H m``
  and transverse shear ``q = P div m``.
* Equilibrium ``div n_real + n div q + H div m + f = 0``.
* On a boundary with triad ``(t, nb, n)`` (``nb = n x t`` pointing outwards)
  the traction is ``p = n_real nb + n (q . nb)``, the moments
  ``m_n = t . m nb`` and ``m_t = nb . m nb`` and the rotations
  ``omega_t = -(grad^T n) . nb`` and ``omega_n = -(grad^T n) . t``.  With these
  ``a(u, v) - int_boundary [v . p(u) + omega_n(v) m_n(u) + omega_t(v) m_t(u)]
  = int f(u) . v`` holds on smooth boundaries.
"""
from dataclasses import dataclass

import numpy as np

from . import jets
from .spline import GeometryJets, SplineSurface, TensorBasis, geometry_jets


@dataclass(frozen=True)
class ShellMaterial:
    """Isotropic linear-elastic shell material."""

    E: float
    nu: float
    t: float

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if self.t <= 0:
            raise ValueError("thickness must be positive")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        return self.E * self.nu / (1.0 - self.nu**2)

    @property
    def bending_stiffness(self) -> float:
        return self.E * self.t**3 / (12.0 * (1.0 - self.nu**2))

    def voigt(self) -> np.ndarray:
        """In-plane constitutive matrix for ``[e11, e22, 2 e12]``."""
        mu, lam = self.mu, self.lam
        return np.array([[2 * mu + lam, lam, 0.0], [lam, 2 * mu + lam, 0.0], [0.0, 0.0, mu]])


# --- jets of geometry and fields ------------------------------------------------


def point_jets(surface: SplineSurface, xi, degree: int, spans=None, basis: TensorBasis | None = None):
    """Geometry jets and analysis-basis jets at parameter points.

    Returns ``(geo, idx, bjets)`` with ``bjets`` of shape ``(N, nb, nc_degree)``.
    The analysis basis defaults to the geometry basis (isoparametric).
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    gb = surface.basis
    idx_g, ders_g = gb.eval(xi, degree, spans)
    mapd = np.einsum("nAab,nAc->nabc", ders_g, surface.control.reshape(-1, 3)[idx_g])
    geo = geometry_jets(mapd, degree)
    if basis is None or basis is gb:
        idx, ders = idx_g, ders_g
    else:
        idx, ders = basis.eval(xi, degree, spans)
    return geo, idx, jets.from_derivatives(ders, degree)


def displacement_jets(idx: np.ndarray, bjets: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Jets ``(N, 3, nc)`` of ``u = sum_A N_A c_A`` from basis jets."""
    c = np.asarray(coeffs, dtype=float).reshape(-1, 3)[idx]  # (N, nb, 3)
    return np.einsum("nAc,nAk->nck", c, bjets)


def unit_fields(bjets: np.ndarray) -> np.ndarray:
    """Jets of the vector fields ``N_A e_i`` as ``(N, nb*3, 3, nc)`` (node-major)."""
    N, nb, nc = bjets.shape
    out = np.zeros((N, nb, 3, 3, nc))
    for i in range(3):
        out[:, :, i, i, :] = bjets
    return out.reshape(N, nb * 3, 3, nc)


def _bcast(geo_arr: np.ndarray, extra: int) -> np.ndarray:
    """Insert ``extra`` field axes after the point axis."""
    return geo_arr.reshape((geo_arr.shape[0],) + (1,) * extra + geo_arr.shape[1:])


def surface_gradient(field: np.ndarray, geo: GeometryJets) -> np.ndarray:
    """Directional surface gradient; appends a Cartesian axis, lowers the degree."""
    return jets.surface_derivative(field, geo.jplus)


def surface_divergence(tensor: np.ndarray, geo: GeometryJets) -> np.ndarray:
    """``(div A)_i = D_j A_ij`` for a tensor jet ``(..., 3, 3, nc)``."""
    g = jets.surface_derivative(tensor, geo.jplus)
    return np.einsum("...ijjk->...ik", g)


def _mat(a: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    """Jet matrix product ``a @ b`` over the two trailing tensor axes."""
    return jets.mul(a[..., :, :, None, :], b[..., None, :, :, :], d).sum(axis=-3)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -2, -3))


def _trace(a: np.ndarray) -> np.ndarray:
    return np.einsum("...iik->...k", a)


@dataclass
class KinematicState:
    """Jets of the kinematic quantities of a displacement field."""

    grad: np.ndarray        # (..., 3, 3, nc_{d-1})
    grad2: np.ndarray | None  # (..., 3, 3, 3, nc_{d-2}) D_l D_j u_i
    eps_m: np.ndarray       # (..., 3, 3, nc_{d-1})
    eps_b: np.ndarray | None  # (..., 3, 3, nc_{d-2})
    w: np.ndarray           # (..., 3, nc_{d-1}) difference vector


def kinematics(U: np.ndarray, geo: GeometryJets) -> KinematicState:
    """Kinematics of displacement jets ``U`` of shape ``(N, *F, 3, nc_d)``."""
    extra = U.ndim - 3
    d = jets.degree_of(U)
    grad = surface_gradient(U, geo)
    P = _bcast(geo.projector, extra)
    n = _bcast(geo.normal, extra)
    eps_m = _sym(_mat(_mat(P, grad, d - 1), P, d - 1))
    gsym = grad + np.swapaxes(grad, -2, -3)
    w = -jets.mul(gsym, n[..., None, :, :], d - 1).sum(axis=-2)
    grad2 = eps_b = None
    if d >= 2:
        grad2 = surface_gradient(grad, geo)
        # n_k D_l D_j u_k
        b = jets.mul(grad2, n[..., :, None, None, :], d - 2).sum(axis=-4)
        eps_b = -_sym(_mat(_mat(P, b, d - 2), P, d - 2))
    return KinematicState(grad=grad, grad2=grad2, eps_m=eps_m, eps_b=eps_b, w=w)


def _hooke(eps: np.ndarray, P: np.ndarray, mat: ShellMaterial, d: int) -> np.ndarray:
    tr = _trace(eps)
    return 2 * mat.mu * eps + mat.lam * jets.mul(tr[..., None, None, :], P, d)


@dataclass
class StressResultants:
    """Jets of the stress resultants."""

    n_eff: np.ndarray
    m: np.ndarray | None
    n_real: np.ndarray | None
    q: np.ndarray | None


def stress_resultants(state: KinematicState, geo: GeometryJets, mat: ShellMaterial) -> StressResultants:
    extra = state.grad.ndim - 4
    P = _bcast(geo.projector, extra)
    d1 = jets.degree_of(state.eps_m)
    n_eff = mat.t * _hooke(state.eps_m, P, mat, d1)
    m = n_real = q = None
    if state.eps_b is not None:
        d2 = jets.degree_of(state.eps_b)
        m = mat.t**3 / 12.0 * _hooke(state.eps_b, P, mat, d2)
        H = _bcast(geo.weingarten, extra)
        n_real = jets.truncate(n_eff, d2) + _mat(H, m, d2)
        if d2 >= 1:
            q = jets.mul(P, surface_divergence(m, geo)[..., None, :, :], d2 - 1).sum(axis=-2)
    return StressResultants(n_eff=n_eff, m=m, n_real=n_real, q=q)


def strong_residual_jets(U: np.ndarray, geo: GeometryJets, mat: ShellMaterial) -> np.ndarray:
    """Values of ``div n_real + n div q + H div m`` (needs ``U`` of degree 4)."""
    if jets.degree_of(U) < 4:
        raise ValueError("strong residual needs fourth-order jets")
    extra = U.ndim - 3
    st = kinematics(U, geo)
    res = stress_resultants(st, geo, mat)
    div_n = surface_divergence(res.n_real, geo)
    div_q = np.einsum("...jjk->...k", surface_gradient(res.q, geo))
    div_m = surface_divergence(res.m, geo)
    n = _bcast(geo.normal, extra)[..., 0]
    H = _bcast(geo.weingarten, extra)[..., 0]
    return div_n[..., 0] + n * div_q[..., None, 0] + np.einsum("...ij,...j->...i", H, div_m[..., 0])


@dataclass
class BoundaryQuantities:
    """Values of the boundary operators at boundary points."""

    p: np.ndarray        # (..., 3) traction
    m_n: np.ndarray      # (...,) twisting moment
    m_t: np.ndarray      # (...,) bending moment
    omega_t: np.ndarray  # (...,) rotation about the tangent
    omega_n: np.ndarray  # (...,) rotation about the co-normal
    grad: np.ndarray     # (..., 3, 3) directional gradient


def boundary_quantities(U: np.ndarray, geo: GeometryJets, mat: ShellMaterial, t: np.ndarray, nb: np.ndarray) -> BoundaryQuantities:
    """Boundary tractions, moments and rotations (``U`` of degree >= 3).

    ``t`` and ``nb`` are ``(N, 3)`` tangent and outward co-normal.
    """
    if jets.degree_of(U) < 3:
        raise ValueError("boundary tractions need third-order jets")
    extra = U.ndim - 3
    st = kinematics(U, geo)
    res = stress_resultants(st, geo, mat)
    sh = (t.shape[0],) + (1,) * extra + (3,)
    t_ = t.reshape(sh)
    nb_ = nb.reshape(sh)
    n = _bcast(geo.normal, extra)[..., 0]
    nreal = res.n_real[..., 0]
    m = res.m[..., 0]
    q = res.q[..., 0]
    p = np.einsum("...ij,...j->...i", nreal, nb_) + n * np.einsum("...i,...i->...", q, nb_)[..., None]
    m_n = np.einsum("...i,...ij,...j->...", t_, m, nb_)
    m_t = np.einsum("...i,...ij,...j->...", nb_, m, nb_)
    G = st.grad[..., 0]
    gtn = np.einsum("...ij,...i->...j", G, n)
    return BoundaryQuantities(
        p=p,
        m_n=m_n,
        m_t=m_t,
        omega_t=-np.einsum("...j,...j->...", gtn, nb_),
        omega_n=-np.einsum("...j,...j->...", gtn, t_),
        grad=G,
    )


# --- boundary conditions --------------------------------------------------------

CLAMPED = "clamped"
SIMPLE = "simple"
SLIP = "slip"
FREE = "free"
NEUMANN = "neumann"
KINDS = (CLAMPED, SIMPLE, SLIP, FREE, NEUMANN)


@dataclass
class BoundaryCondition:
    """Boundary condition on one trimming curve or patch edge.

    Parameters
    ----------
    kind : str
        ``clamped`` (all displacements and the rotation ``omega_t``),
        ``simple`` (all displacements), ``slip`` (displacements along the
        directions in ``directions``; rotation if ``rotation`` is set),
        ``free`` or ``neumann`` (tractions ``traction`` and moment ``moment``).
    directions : sequence of 3-vectors, optional
        Constrained unit directions for ``slip``.
    rotation : bool
        Constrain ``omega_t`` (implied by ``clamped``).
    displacement : callable, optional
        ``g(x, n) -> (N, 3)`` prescribed displacement at physical points ``x``
        with surface normals ``n``.
    displacement_tangent_derivative : callable, optional
        ``dg(x, n, t) -> (N, 3)``, the derivative of the prescribed
        displacement along the unit tangent ``t``; finite differences along
        the boundary curve are used when omitted.
    rotation_value : callable, optional
        ``g_omega(x) -> (N,)`` prescribed rotation ``omega_t``.
    traction, moment : callable, optional
        Neumann data ``p(x) -> (N, 3)`` and ``m(x) -> (N,)``.
    """

    kind: str
    directions: tuple | None = None
    rotation: bool = False
    displacement: object = None
    displacement_tangent_derivative: object = None
    rotation_value: object = None
    traction: object = None
    moment: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown boundary-condition kind {self.kind!r}")
        if self.kind == SLIP and not self.directions:
            raise ValueError("slip conditions need at least one direction")
        if self.kind == CLAMPED:
            self.rotation = True

    @property
    def constrained_directions(self) -> np.ndarray:
        if self.kind in (CLAMPED, SIMPLE):
            return np.eye(3)
        if self.kind == SLIP:
            d = np.atleast_2d(np.asarray(self.directions, dtype=float))
            return d / np.linalg.norm(d, axis=1, keepdims=True)
        return np.zeros((0, 3))

    @property
    def is_dirichlet(self) -> bool:
        return self.kind in (CLAMPED, SIMPLE, SLIP) or self.rotation


def nitsche_lhs(bq_u: BoundaryQuantities, bq_v: BoundaryQuantities, u_val, v_val, n, t, bc: BoundaryCondition) -> np.ndarray:
    """Left-hand-side density of the non-symmetric Nitsche terms.

    ``bq_u`` / ``u_val`` describe trial fields, ``bq_v`` / ``v_val`` test
    fields; both may carry arbitrary field axes, which broadcast (trial axes
    must be placed after test axes by the caller).  ``n`` and ``t`` are the
    surface normal and boundary tangent broadcastable against the fields.
    """
    out = 0.0
    for d in bc.constrained_directions:
        dn = np.einsum("...i,i->...", n, d)
        dtu = np.einsum("...ij,...j,i->...", bq_u.grad, t, d)  # d . D_t u
        dtv = np.einsum("...ij,...j,i->...", bq_v.grad, t, d)
        Om_u = -dn * dtu
        Om_v = -dn * dtv
        ud = np.einsum("...i,i->...", u_val, d)
        vd = np.einsum("...i,i->...", v_val, d)
        pu = np.einsum("...i,i->...", bq_u.p, d)
        pv = np.einsum("...i,i->...", bq_v.p, d)
        out = out - (vd * pu + Om_v * bq_u.m_n) + (ud * pv + Om_u * bq_v.m_n)
    if bc.rotation:
        out = out - bq_v.omega_t * bq_u.m_t + bq_u.omega_t * bq_v.m_t
    return out


def nitsche_rhs(bq_v: BoundaryQuantities, g_val, dg_t, g_omega, n, bc: BoundaryCondition) -> np.ndarray:
    """Right-hand-side density of the Nitsche terms for prescribed data.

    ``g_val`` and ``dg_t`` are the prescribed displacement and its tangential
    derivative ``(N, 3)``; ``g_omega`` the prescribed rotation ``(N,)``.
    """
    out = 0.0
    for d in bc.constrained_directions:
        dn = n @ d
        Gd = g_val @ d
        Om_g = -dn * (dg_t @ d)
        pv = np.einsum("...i,i->...", bq_v.p, d)
        out = out + _lift(Gd, pv) * pv + _lift(Om_g, bq_v.m_n) * bq_v.m_n
    if bc.rotation and g_omega is not None:
        out = out + _lift(g_omega, bq_v.m_t) * bq_v.m_t
    return out


def _lift(a: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Reshape a per-point array to broadcast against ``like`` (points first)."""
    return np.asarray(a).reshape(np.shape(a)[:1] + (1,) * (np.ndim(like) - 1))


def kirchhoff_corner_force(m_n_before: np.ndarray, m_n_after: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Corner force ``(m_n(after) - m_n(before)) n`` at a boundary corner.

    ``before`` and ``after`` refer to the boundary traversal direction; the
    force vanishes on smooth boundaries and flips sign with the traversal.
    """
    return (np.asarray(m_n_after) - np.asarray(m_n_before))[..., None] * np.asarray(normal)


# --- fast interior stiffness ------------------------------------------------------


def tangent_basis(normal: np.ndarray, t1: np.ndarray) -> tuple:
    """Orthonormal tangent vectors ``(e1, e2)`` with ``e1 || t1``."""
    e1 = t1 / np.linalg.norm(t1, axis=-1, keepdims=True)
    e2 = np.cross(normal, e1)
    return e1, e2


def strain_operators(geo: GeometryJets, bjets: np.ndarray):
    """Voigt strain-displacement operators for the fields ``N_A e_i``.

    Returns ``(BM, BB)`` of shape ``(N, nb, 3 comps, 3 voigt)`` for membrane and
    bending strains in the local orthonormal tangent basis.
    """
    g_j = jets.surface_derivative(bjets, geo.jplus)          # (N, nb, 3, nc1)
    h_j = jets.surface_derivative(g_j, geo.jplus)            # (N, nb, 3, 3, nc0)
    g = g_j[..., 0]
    h = h_j[..., 0]
    n = geo.value("normal")
    e1, e2 = tangent_basis(n, geo.tangents[:, :, 0])
    g1 = np.einsum("nAj,nj->nA", g, e1)
    g2 = np.einsum("nAj,nj->nA", g, e2)
    h11 = np.einsum("nAjk,nj,nk->nA", h, e1, e1)
    h22 = np.einsum("nAjk,nj,nk->nA", h, e2, e2)
    h12 = np.einsum("nAjk,nj,nk->nA", h, e1, e2) + np.einsum("nAjk,nj,nk->nA", h, e2, e1)
    BM = np.stack(
        [
            e1[:, None, :] * g1[..., None],
            e2[:, None, :] * g2[..., None],
            e1[:, None, :] * g2[..., None] + e2[:, None, :] * g1[..., None],
        ],
        axis=-1,
    )
    BB = -n[:, None, :, None] * np.stack([h11, h22, h12], axis=-1)[:, :, None, :]
    return BM, BB


def element_stiffness(geo: GeometryJets, bjets: np.ndarray, weights: np.ndarray, mat: ShellMaterial) -> np.ndarray:
    """Per-point stiffness contributions ``(N, nb*3, nb*3)`` (node-major)."""
    BM, BB = strain_operators(geo, bjets)
    N, nb = BM.shape[:2]
    C = mat.voigt()
    BM = BM.reshape(N, nb * 3, 3)
    BB = BB.reshape(N, nb * 3, 3)
    wm = weights * mat.t
    wb = weights * mat.t**3 / 12.0
    K = np.einsum("nav,vw,nbw->nab", BM * wm[:, None, None], C, BM)
    K += np.einsum("nav,vw,nbw->nab", BB * wb[:, None, None], C, BB)
    return K


def energy_density(geo: GeometryJets, U: np.ndarray, mat: ShellMaterial) -> np.ndarray:
    """Pointwise ``eps_M : n_eff + eps_B : m`` (twice the energy density)."""
    st = kinematics(U, geo)
    res = stress_resultants(st, geo, mat)
    return np.einsum("...ij,...ij->...", st.eps_m[..., 0], res.n_eff[..., 0]) + np.einsum(
        "...ij,...ij->...", st.eps_b[..., 0], res.m[..., 0]
    )


def bilinear_density(geo: GeometryJets, U: np.ndarray, V: np.ndarray, mat: ShellMaterial) -> np.ndarray:
    """Pointwise ``eps_M(v) : n_eff(u) + eps_B(v) : m(u)``."""
    su = kinematics(U, geo)
    sv = kinematics(V, geo)
    ru = stress_resultants(su, geo, mat)
    return np.einsum("...ij,...ij->...", sv.eps_m[..., 0], ru.n_eff[..., 0]) + np.einsum(
        "...ij,...ij->...", sv.eps_b[..., 0], ru.m[..., 0]
    )
