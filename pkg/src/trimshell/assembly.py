"""Galerkin assembly of the non-symmetric Nitsche system, stabilization with
the extension matrix, direct solution and condition estimation.

Degrees of freedom use a node-major layout: the displacement component ``i``
of basis function ``A`` has equation number ``3 * A + i``.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, onenormest

from . import shell
from .extension import vector_extension
from .quadrature import IntegrationMesh
from .shell import BoundaryCondition, BoundaryQuantities, ShellMaterial
from .trimming import TrimmedPatch

CHUNK_INTERIOR = 1024
CHUNK_BOUNDARY = 48


class ConfigurationError(ValueError):
    """Boundary tags without a boundary condition or inconsistent inputs."""


class SingularSystemError(np.linalg.LinAlgError):
    """The stabilized system matrix is singular."""

    def __init__(self, msg: str, pivot: int | None = None):
        super().__init__(msg)
        self.pivot = pivot


@dataclass
class ShellProblem:
    """Trimmed shell with material, loads and boundary conditions.

    ``load(x)`` returns body forces ``(N, 3)`` at physical points; a constant
    3-vector is accepted.  ``bcs`` maps boundary tags (trimming-curve names or
    ``edge:r0`` / ``edge:r1`` / ``edge:s0`` / ``edge:s1``) to conditions.
    """

    patch: TrimmedPatch
    material: ShellMaterial
    load: object
    bcs: dict = field(default_factory=dict)

    def load_at(self, x: np.ndarray) -> np.ndarray:
        if callable(self.load):
            return np.asarray(self.load(x), dtype=float).reshape(len(x), 3)
        return np.broadcast_to(np.asarray(self.load, dtype=float), (len(x), 3))


@dataclass
class DofMap:
    """Node-major map ``(A, i) -> 3 A + i`` plus the stable sub-map."""

    n_functions: int
    stable: np.ndarray | None = None

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_functions

    def dof(self, A, i) -> np.ndarray:
        return 3 * np.asarray(A) + np.asarray(i)

    def local_dofs(self, idx: np.ndarray) -> np.ndarray:
        """Equation numbers ``(..., nb * 3)`` of the functions ``idx``."""
        return (3 * idx[..., :, None] + np.arange(3)).reshape(idx.shape[:-1] + (-1,))

    @property
    def stable_dofs(self) -> np.ndarray:
        if self.stable is None:
            return np.arange(self.n_dofs)
        return self.local_dofs(np.asarray(self.stable)[None, :])[0]


@dataclass
class LinearSystem:
    """Assembled system with its bilinear-form and Nitsche parts kept apart."""

    K: sp.csr_matrix
    f: np.ndarray
    K_a: sp.csr_matrix
    K_nitsche: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.K.shape[0]


@dataclass
class SolveReport:
    u: np.ndarray
    cond_est: float
    residual: float
    n_stable_dofs: int
    lu: tuple | None = None


def _span_groups(spans: np.ndarray) -> np.ndarray:
    if len(spans) == 0:
        return np.zeros(0, dtype=int)
    change = np.any(np.diff(spans, axis=0) != 0, axis=1)
    return np.r_[0, np.nonzero(change)[0] + 1]


def _scatter(rows_l, cols_l, vals_l, dofs: np.ndarray, blocks: np.ndarray) -> None:
    nd = dofs.shape[1]
    rows_l.append(np.repeat(dofs, nd, axis=1).reshape(-1))
    cols_l.append(np.tile(dofs, (1, nd)).reshape(-1))
    vals_l.append(blocks.reshape(-1))


def boundary_frames(patch: TrimmedPatch, geo, btangent: np.ndarray):
    """Unit tangent, outward co-normal, normal and arc-length Jacobian."""
    tv = np.einsum("nij,nj->ni", geo.tangents, btangent)
    ds = np.linalg.norm(tv, axis=1)
    if np.any(ds == 0):
        raise ValueError("zero boundary tangent")
    t = tv / ds[:, None]
    n = geo.value("normal")
    nb = np.cross(n, t)
    return t, nb, n, ds


def _select(bq: BoundaryQuantities, axis: int) -> BoundaryQuantities:
    """Insert a broadcast axis (1: trial fields, 2: test fields)."""
    def ex(a):
        return np.expand_dims(a, axis)

    return BoundaryQuantities(
        p=ex(bq.p), m_n=ex(bq.m_n), m_t=ex(bq.m_t), omega_t=ex(bq.omega_t), omega_n=ex(bq.omega_n), grad=ex(bq.grad)
    )


def _tangent_derivative_fd(problem: ShellProblem, bc: BoundaryCondition, xi, dxi, ds, h=1e-5):
    """Central difference of the prescribed displacement along the boundary."""
    surf = problem.patch.surface
    step = (dxi / ds[:, None]) * h  # parameter step for arc length h
    vals = []
    for sgn in (1.0, -1.0):
        pts = xi + sgn * step
        lo = np.array(surf.basis.bounds[0::2])
        hi = np.array(surf.basis.bounds[1::2])
        pts = np.clip(pts, lo, hi)
        geo, _, _ = shell.point_jets(surf, pts, 1)
        vals.append(np.asarray(bc.displacement(geo.value("x"), geo.value("normal")), dtype=float))
    return (vals[0] - vals[1]) / (2 * h)


def assemble(problem: ShellProblem, mesh: IntegrationMesh) -> LinearSystem:
    """Assemble stiffness, loads and Nitsche boundary terms."""
    patch = problem.patch
    surf = patch.surface
    basis = surf.basis
    mat = problem.material
    dm = DofMap(basis.n_basis)
    ndof = dm.n_dofs
    f = np.zeros(ndof)

    unknown = set(mesh.tags) - set(problem.bcs)
    if unknown:
        raise ConfigurationError(f"no boundary condition for tags {sorted(unknown)}")

    # interior: stiffness and body load
    rows, cols, vals = [], [], []
    npts = mesh.n_interior
    for c0 in range(0, npts, CHUNK_INTERIOR):
        sl = slice(c0, min(c0 + CHUNK_INTERIOR, npts))
        xi, spans = mesh.xi[sl], mesh.spans[sl]
        geo, idx, bj = shell.point_jets(surf, xi, 2, spans)
        w = mesh.weights[sl] * geo.area
        Kp = shell.element_stiffness(geo, bj, w, mat)
        starts = _span_groups(spans)
        Ke = np.add.reduceat(Kp, starts, axis=0)
        _scatter(rows, cols, vals, dm.local_dofs(idx[starts]), Ke)
        fl = problem.load_at(geo.value("x")) * w[:, None]
        np.add.at(f, (3 * idx[:, :, None] + np.arange(3)).reshape(len(idx), -1),
                  (bj[:, :, None, 0] * fl[:, None, :]).reshape(len(idx), -1))
    K_a = sp.coo_matrix(
        (np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [], np.concatenate(cols) if cols else [])),
        shape=(ndof, ndof),
    ).tocsr()

    # boundary terms
    rows, cols, vals = [], [], []
    for tag in mesh.tags:
        bc = problem.bcs[tag]
        if bc.kind == shell.FREE and not bc.rotation:
            continue
        sel = np.nonzero(mesh.boundary_mask(tag))[0]
        for c0 in range(0, len(sel), CHUNK_BOUNDARY):
            ii = sel[c0 : c0 + CHUNK_BOUNDARY]
            xi, spans, dxi = mesh.bxi[ii], mesh.bspans[ii], mesh.btangent[ii]
            geo, idx, bj = shell.point_jets(surf, xi, 3, spans)
            t, nb, n, ds = boundary_frames(patch, geo, dxi)
            w = mesh.bweights[ii] * ds
            Uf = shell.unit_fields(bj)  # (N, F, 3, nc)
            bq = shell.boundary_quantities(Uf, geo, mat, t, nb)
            vals_f = Uf[..., 0]  # (N, F, 3)
            dofs = dm.local_dofs(idx)
            x = geo.value("x")
            if bc.kind == shell.NEUMANN:
                rhs = 0.0
                if bc.traction is not None:
                    rhs = rhs + np.einsum("nfi,ni->nf", vals_f, np.asarray(bc.traction(x), dtype=float))
                if bc.moment is not None:
                    rhs = rhs + bq.omega_t * np.asarray(bc.moment(x), dtype=float)[:, None]
                if np.ndim(rhs):
                    np.add.at(f, dofs, rhs * w[:, None])
                continue
            lhs = shell.nitsche_lhs(
                _select(bq, 1), _select(bq, 2), vals_f[:, None], vals_f[:, :, None],
                n[:, None, None, :], t[:, None, None, :], bc,
            )
            starts = _span_groups(spans)
            Ke = np.add.reduceat(lhs * w[:, None, None], starts, axis=0)
            _scatter(rows, cols, vals, dofs[starts], Ke)
            g_val = np.zeros((len(ii), 3)) if bc.displacement is None else np.asarray(bc.displacement(x, n), dtype=float)
            if bc.displacement is None:
                dg = np.zeros((len(ii), 3))
            elif bc.displacement_tangent_derivative is not None:
                dg = np.asarray(bc.displacement_tangent_derivative(x, n, t), dtype=float)
            else:
                dg = _tangent_derivative_fd(problem, bc, xi, dxi, ds)
            g_om = None if bc.rotation_value is None else np.asarray(bc.rotation_value(x), dtype=float)
            rhs = shell.nitsche_rhs(bq, g_val, dg, g_om, n, bc)
            if np.ndim(rhs):
                np.add.at(f, dofs, rhs * w[:, None])
    K_n = sp.coo_matrix(
        (np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [], np.concatenate(cols) if cols else [])),
        shape=(ndof, ndof),
    ).tocsr()
    return LinearSystem(K=(K_a + K_n).tocsr(), f=f, K_a=K_a, K_nitsche=K_n)


def stabilize_and_solve(system: LinearSystem, E=None, check: float = 1e-8, condition: bool = True,
                        refine: int = 3) -> SolveReport:
    """Solve ``E^T K E u_st = E^T f`` by LU and expand ``u = E u_st``.

    ``E`` is the scalar extension matrix (functions x stable functions); it is
    repeated per displacement component.  ``None`` means no stabilization.
    Up to ``refine`` iterative-refinement steps reuse the LU factors before
    the relative residual is checked against ``check``.
    """
    if E is None:
        Ev = sp.identity(system.dim, format="csr")
    else:
        Ev = vector_extension(E) if E.shape[0] * 3 == system.dim else E
    if Ev.shape[0] != system.dim:
        raise ValueError("extension matrix does not match the system")
    Kst = (Ev.T @ system.K @ Ev).toarray()
    fst = Ev.T @ system.f
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(Kst, check_finite=True)
    diag = np.abs(np.diag(lu))
    tiny = np.nonzero(diag <= np.finfo(float).eps * max(diag.max(), 1e-300) * 1e-3)[0]
    if len(tiny):
        raise SingularSystemError(f"singular stabilized system (zero pivot at {tiny[0]})", int(tiny[0]))
    ust = sla.lu_solve((lu, piv), fst)
    nf = np.linalg.norm(fst)
    # a few steps of iterative refinement with residuals accumulated in
    # extended precision recover the digits lost to the conditioning of
    # 4th-order problems
    Kx = Kst.astype(np.longdouble) if refine else Kst
    fx = np.asarray(fst, dtype=Kx.dtype)
    for _ in range(refine + 1):
        res = np.asarray(fx - Kx @ ust.astype(Kx.dtype), dtype=float)
        r = np.linalg.norm(res)
        residual = r / nf if nf > 0 else r
        if residual <= 1e-3 * check or _ == refine:
            break
        ust = ust + sla.lu_solve((lu, piv), res)
    if residual > check:
        raise SingularSystemError(f"algebraic residual {residual:.3e} exceeds {check:g}")
    cond = estimate_condition(Kst, (lu, piv)) if condition else float("nan")
    return SolveReport(u=Ev @ ust, cond_est=cond, residual=float(residual), n_stable_dofs=len(fst), lu=(lu, piv))


def estimate_condition(K, lu=None) -> float:
    """1-norm condition estimate ``||K||_1 * est(||K^-1||_1)``.

    The inverse norm is estimated with the block Hager-Higham algorithm
    (:func:`scipy.sparse.linalg.onenormest`) applying ``K^-1`` through LU
    factors.  Singular matrices give ``inf``.
    """
    K = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
    n = K.shape[0]
    if lu is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            try:
                lu = sla.lu_factor(K)
            except (ValueError, np.linalg.LinAlgError):
                return float("inf")
    if np.any(np.diag(lu[0]) == 0):
        return float("inf")
    norm1 = np.abs(K).sum(axis=0).max()
    if n <= 4:
        inv = sla.lu_solve(lu, np.eye(n))
        return float(norm1 * np.abs(inv).sum(axis=0).max())
    op = LinearOperator(
        (n, n),
        matvec=lambda x: sla.lu_solve(lu, x),
        rmatvec=lambda x: sla.lu_solve(lu, x, trans=1),
        matmat=lambda X: sla.lu_solve(lu, X),
        dtype=float,
    )
    with np.errstate(all="ignore"):
        est = onenormest(op, t=2)
    return float(norm1 * est) if np.isfinite(est) else float("inf")


def write_triplets(K, path) -> None:
    """Write a matrix as ``row col value`` lines."""
    coo = sp.coo_matrix(K)
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


@dataclass
class Solution:
    """Discrete solution with everything needed for post-processing."""

    problem: ShellProblem
    mesh: IntegrationMesh
    classification: object
    E: sp.csr_matrix | None
    system: LinearSystem
    report: SolveReport
    alpha: float = float("nan")

    @property
    def coefficients(self) -> np.ndarray:
        """Control displacements ``(n_functions, 3)``."""
        return self.report.u.reshape(-1, 3)

    def displacement_jets(self, xi, degree: int, spans=None):
        """Geometry jets and displacement jets ``(N, 3, nc)`` at ``xi``."""
        geo, idx, bj = shell.point_jets(self.problem.patch.surface, xi, degree, spans)
        return geo, shell.displacement_jets(idx, bj, self.coefficients)

    def displacement(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        idx, ders = self.problem.patch.basis.eval(xi, 0)
        return np.einsum("nb,nbi->ni", ders[:, :, 0, 0], self.coefficients[idx])


def solve(problem: ShellProblem, alpha: float = 0.5, stabilize: bool = True, q: int = 3, g: int | None = None,
          condition: bool = True, mesh: IntegrationMesh | None = None, alpha_fallback: bool = True) -> Solution:
    """Integration mesh, assembly, extension and direct solve in one call.

    Without stabilization, exterior functions (no visible support) are still
    removed so that the system is not trivially singular.  If no knot span
    contains only stable functions at the requested ``alpha`` and
    ``alpha_fallback`` is set, the threshold is lowered to the largest
    feasible value (with a warning); the value used is stored in
    ``Solution.alpha``.
    """
    from .extension import (
        EXTERIOR,
        UnsolvableConfigurationError,
        build_extension_matrix,
        classify_functions,
        max_feasible_alpha,
    )
    from .quadrature import build_integration_mesh

    if mesh is None:
        mesh = build_integration_mesh(problem.patch, q=q, g=g)
    basis = problem.patch.basis
    if not stabilize:
        alpha = np.finfo(float).tiny  # every function with visible support is kept
    try:
        cls = classify_functions(basis, mesh, alpha)
    except UnsolvableConfigurationError:
        if not (stabilize and alpha_fallback):
            raise
        feasible = max_feasible_alpha(basis, mesh)
        if feasible <= 0.0:
            raise
        warnings.warn(f"no all-stable knot span at alpha={alpha:g}; using alpha={feasible:.6g}", RuntimeWarning)
        alpha = feasible
        cls = classify_functions(basis, mesh, alpha)
    if stabilize:
        E = build_extension_matrix(cls, basis)
    else:
        keep = np.nonzero(cls.labels != EXTERIOR)[0]
        E = sp.csr_matrix((np.ones(len(keep)), (keep, np.arange(len(keep)))), shape=(basis.n_basis, len(keep)))
    system = assemble(problem, mesh)
    report = stabilize_and_solve(system, E, condition=condition)
    return Solution(problem, mesh, cls, E, system, report, alpha)
