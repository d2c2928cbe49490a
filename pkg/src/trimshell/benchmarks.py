"""Built-in benchmark problems: Scordelis-Lo roof, flat shell in R^3 with a
manufactured solution, and the clamped circular shell on a curved map."""
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy

from . import jets
from .assembly import ShellProblem
from .shell import BoundaryCondition, ShellMaterial, strong_residual_jets
from .spline import KnotVector, SplineSurface, TensorBasis, geometry_jets, interpolate_control_net, invert_point
from .trimming import LevelSetFunction, TrimmedPatch, disk_levelset, linear_levelset


@dataclass
class ExactSolution:
    """Exact displacement as a function of the parameters.

    ``derivatives(xi, k)`` returns ``(N, 3, k+1, k+1)`` partial derivatives.
    """

    derivatives: Callable

    def jets(self, xi, degree: int) -> np.ndarray:
        return jets.from_derivatives(self.derivatives(xi, degree), degree)

    def __call__(self, xi) -> np.ndarray:
        return self.derivatives(xi, 0)[..., 0, 0]


@dataclass
class BenchmarkInstance:
    """A benchmark discretized with ``n`` spans per direction and degree ``p``."""

    problem: ShellProblem
    exact: ExactSolution | None = None
    sample_xi: tuple | None = None


@dataclass
class BenchmarkDefinition:
    name: str
    description: str
    build: Callable
    alpha: float
    n_list: tuple
    p_list: tuple
    reference: dict = field(default_factory=dict)
    measures: tuple = ("energy",)

    def instance(self, n: int, p: int) -> BenchmarkInstance:
        return self.build(n, p)


def _uniform_basis(lo_u, hi_u, lo_v, hi_v, n, p, weights=None) -> TensorBasis:
    return TensorBasis(KnotVector.uniform(lo_u, hi_u, n, p), KnotVector.uniform(lo_v, hi_v, n, p), weights)


# --- Scordelis-Lo roof ---------------------------------------------------------

SCORDELIS = dict(L=50.0, R=25.0, angle_deg=80.0, t=0.25, E=4.32e8, nu=0.0, load=(0.0, 0.0, -90.0), u_ref=0.3006)


def scordelis_surface(n: int, p: int) -> SplineSurface:
    """Cylinder ``x = R sin(theta), z = R cos(theta)``, ``y = 25 s`` over ``[0, 2]^2``.

    The arc ``theta in [-40, 40]`` degrees is the exact rational quadratic
    (middle weight ``cos 40``) represented in the degree-``p`` space by
    interpolating its homogeneous coordinates, which are quadratic
    polynomials and therefore reproduced exactly.
    """
    if p < 2:
        raise ValueError("the circular arc needs degree >= 2")
    R = SCORDELIS["R"]
    half = np.deg2rad(SCORDELIS["angle_deg"] / 2)
    P = np.array([[-R * np.sin(half), R * np.cos(half)], [0.0, R / np.cos(half)], [R * np.sin(half), R * np.cos(half)]])
    wts = np.array([1.0, np.cos(half), 1.0])

    def homog(r):
        t = r / 2.0
        B = np.stack([(1 - t) ** 2, 2 * t * (1 - t), t**2], axis=-1) * wts
        return B.sum(-1), B @ P[:, 0], B @ P[:, 1]

    base = _uniform_basis(0.0, 2.0, 0.0, 2.0, n, p)

    def func(r, s):
        W, X, Z = homog(r)
        return np.stack([W, X, 25.0 * s * W, Z], axis=-1)

    hc = interpolate_control_net(base, func)
    W = hc[..., 0]
    ctrl = hc[..., 1:] / W[..., None]
    return SplineSurface(TensorBasis(base.kv_u, base.kv_v, W), ctrl)


def _build_scordelis(n: int, p: int) -> BenchmarkInstance:
    surf = scordelis_surface(n, p)
    # visible region [0, 1]^2 of the [0, 2]^2 parameter square
    phi1 = linear_levelset(-1.0, 0.0, 1.0, name="phi1")  # 1 - r: crown (x = 0)
    phi2 = linear_levelset(0.0, -1.0, 1.0, name="phi2")  # 1 - s: mid-span (y = 25)
    patch = TrimmedPatch(surf, [phi1, phi2])
    c = SCORDELIS
    mat = ShellMaterial(c["E"], c["nu"], c["t"])
    ex, ey, ez = np.eye(3)
    bcs = {
        "phi1": BoundaryCondition("slip", directions=(ex,), rotation=True),
        "phi2": BoundaryCondition("slip", directions=(ey,), rotation=True),
        "edge:s0": BoundaryCondition("slip", directions=(ex, ez)),  # rigid diaphragm
        "edge:r0": BoundaryCondition("free"),
    }
    # sample point x_i located by inverting the surface map (lands on (0, 1))
    xi = invert_point(surf, scordelis_reference_point(), (0.5, 0.5))
    return BenchmarkInstance(ShellProblem(patch, mat, np.array(c["load"]), bcs), sample_xi=tuple(float(v) for v in xi))


def scordelis_reference_point() -> np.ndarray:
    """Sample point ``x_i = (-R sin(phi/2), L/2, R cos(phi/2))`` at the free edge, mid-span."""
    R = SCORDELIS["R"]
    half = np.deg2rad(SCORDELIS["angle_deg"] / 2)
    return np.array([-R * np.sin(half), 25.0, R * np.cos(half)])


# --- flat shell --------------------------------------------------------------------

FLAT = dict(
    L=1.0, t=0.01, E=1.0e4, nu=0.3,
    normal=(-0.25, -np.sqrt(3) / 2, np.sqrt(3) / 4),
    offset_r=-2.0 / 3.0 + 0.234, offset_s=-2.0 / 3.0 + 0.123,
)


def flat_shell_axes() -> tuple:
    """In-plane unit axes ``(a1, a2)`` and normal of the flat shell plane.

    ``a1`` is the normalized projection of ``e_x`` onto the plane and
    ``a2 = n x a1``, so ``a1 x a2 = n``.
    """
    n = np.array(FLAT["normal"], dtype=float)
    ex = np.array([1.0, 0.0, 0.0])
    a1 = ex - (ex @ n) * n
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(n, a1)
    return a1, a2, n


_r, _s = sympy.symbols("r s", real=True)


def flat_shell_exact_expressions() -> tuple:
    """Manufactured in-plane components ``(U1, U2)`` along ``(a1, a2)`` and the
    normal deflection ``W``, all vanishing on the edges of the unit square.

    Every term is a product ``sin(a pi r) sin(b pi s)`` with integers
    ``a, b``, so the displacement and the bending moment normal to each edge
    vanish there: the field satisfies simple support exactly.
    """
    pi = sympy.pi
    U1 = sympy.sin(pi * _r) * sympy.sin(pi * _s) / 10
    U2 = sympy.sin(pi * _r) * sympy.sin(pi * _s) / 20
    W = sympy.sin(pi * _r) * sympy.sin(pi * _s)
    return U1, U2, W


@lru_cache(maxsize=None)
def _flat_derivative_functions(kmax: int = 4):
    comps = flat_shell_exact_expressions()
    funcs = {}
    for c, e in enumerate(comps):
        for a in range(kmax + 1):
            for b in range(kmax + 1 - a):
                funcs[(c, a, b)] = sympy.lambdify((_r, _s), sympy.diff(e, _r, a, _s, b) if a + b else e, "numpy")
    return funcs


def flat_shell_exact() -> ExactSolution:
    a1, a2, n = flat_shell_axes()
    frame = np.stack([a1, a2, n])  # rows: local axes

    def derivatives(xi, k):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        r, s = xi[:, 0], xi[:, 1]
        funcs = _flat_derivative_functions()
        loc = np.zeros((len(xi), 3, k + 1, k + 1))
        for c in range(3):
            for a in range(k + 1):
                for b in range(k + 1 - a):
                    loc[:, c, a, b] = funcs[(c, a, b)](r, s) * np.ones(len(xi))
        return np.einsum("nlab,li->niab", loc, frame)

    return ExactSolution(derivatives)


def flat_map_derivatives(xi, k: int) -> np.ndarray:
    a1, a2, _ = flat_shell_axes()
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    out = np.zeros((len(xi), k + 1, k + 1, 3))
    out[:, 0, 0] = xi[:, :1] * a1 + xi[:, 1:2] * a2
    if k >= 1:
        out[:, 1, 0] = a1
        out[:, 0, 1] = a2
    return out


def flat_shell_material() -> ShellMaterial:
    return ShellMaterial(FLAT["E"], FLAT["nu"], FLAT["t"])


def flat_shell_load(x: np.ndarray) -> np.ndarray:
    """Body force ``f = -(div n_real + n div q + H div m)`` of the exact field."""
    a1, a2, _ = flat_shell_axes()
    xi = np.stack([x @ a1, x @ a2], axis=1)
    geo = geometry_jets(flat_map_derivatives(xi, 4), 4)
    U = flat_shell_exact().jets(xi, 4)
    return -strong_residual_jets(U, geo, flat_shell_material())


def flat_shell_surface(n: int, p: int, offsets=None) -> SplineSurface:
    a1, a2, _ = flat_shell_axes()
    orr, oss = (FLAT["offset_r"], FLAT["offset_s"]) if offsets is None else offsets
    basis = _uniform_basis(orr, orr + 2.0, oss, oss + 2.0, n, p)
    ctrl = interpolate_control_net(basis, lambda r, s: r[..., None] * a1 + s[..., None] * a2)
    return SplineSurface(basis, ctrl)


def _build_flat(n: int, p: int) -> BenchmarkInstance:
    surf = flat_shell_surface(n, p)
    ls = [
        linear_levelset(0.0, 1.0, 0.0, name="phi1"),   # s
        linear_levelset(-1.0, 0.0, 1.0, name="phi2"),  # 1 - r
        linear_levelset(1.0, 0.0, 0.0, name="phi3"),   # r
        linear_levelset(0.0, -1.0, 1.0, name="phi4"),  # 1 - s
    ]
    patch = TrimmedPatch(surf, ls)
    bcs = {f"phi{k}": BoundaryCondition("simple") for k in range(1, 5)}
    problem = ShellProblem(patch, flat_shell_material(), flat_shell_load, bcs)
    return BenchmarkInstance(problem, exact=flat_shell_exact())


def untrimmed_flat_shell(n: int, p: int) -> BenchmarkInstance:
    """The flat shell on exactly the unit square without trimming."""
    kv = KnotVector.uniform(0.0, 1.0, n, p)
    a1, a2, _ = flat_shell_axes()
    basis = TensorBasis(kv, kv)
    ctrl = interpolate_control_net(basis, lambda r, s: r[..., None] * a1 + s[..., None] * a2)
    surf = SplineSurface(basis, ctrl)
    patch = TrimmedPatch(surf, [])
    bcs = {tag: BoundaryCondition("simple") for tag in ("edge:r0", "edge:r1", "edge:s0", "edge:s1")}
    return BenchmarkInstance(ShellProblem(patch, flat_shell_material(), flat_shell_load, bcs), exact=flat_shell_exact())


def offset_flat_shell(n: int, p: int, cut_fraction: float) -> BenchmarkInstance:
    """Unit-square flat shell whose right trimming line sits ``cut_fraction``
    of a knot span beyond a knot line (the last visible spans are sliver cuts)."""
    h = 2.0 / n
    orr = FLAT["offset_r"]
    # first knot line at or beyond r = 1
    k = int(np.ceil((1.0 - orr) / h - 1e-12))
    r_trim = orr + k * h + cut_fraction * h
    inst = _build_flat(n, p)
    ls = inst.problem.patch.levelsets
    ls[1] = linear_levelset(-1.0, 0.0, r_trim, name="phi2")
    inst.problem.patch = TrimmedPatch(inst.problem.patch.surface, ls)
    return inst


# --- clamped circular shell ------------------------------------------------------------

CIRCULAR = dict(
    bounds=(-0.875, 0.875), radius=0.7123, E=1.0e4, nu=0.3, load=(0.0, 0.0, -100.0),
    g_scale=-0.1, energy_ref=58.5719, t=0.1,
)


def circular_map(r, s) -> np.ndarray:
    x = 2 + r - 2 * s - 0.2 * r * s + 0.75 * np.sin(2 * r + 0.3)
    y = 1 + r + s + 0.5 * r * s + 0.5 * np.cos(r + 1.5 * s)
    z = -0.3 + 0.5 * r**2 + 0.75 * s + np.sin(r * s) + 0.2 * (x - 2) ** 2
    return np.stack([x, y, z], axis=-1)


def circular_surface(n: int, p: int) -> SplineSurface:
    """Greville interpolant of the analytic map in the degree-``p`` space."""
    lo, hi = CIRCULAR["bounds"]
    basis = _uniform_basis(lo, hi, lo, hi, n, p)
    return SplineSurface(basis, interpolate_control_net(basis, circular_map))


def circular_dirichlet(x, n):
    return CIRCULAR["g_scale"] * np.asarray(n)


def _build_circular(n: int, p: int, thickness: float | None = None, radius: float | None = None) -> BenchmarkInstance:
    surf = circular_surface(n, p)
    radius = CIRCULAR["radius"] if radius is None else radius
    patch = TrimmedPatch(surf, [disk_levelset(radius, name="phi1")])
    t = CIRCULAR["t"] if thickness is None else thickness
    mat = ShellMaterial(CIRCULAR["E"], CIRCULAR["nu"], t)
    bcs = {"phi1": BoundaryCondition("clamped", displacement=circular_dirichlet)}
    return BenchmarkInstance(ShellProblem(patch, mat, np.array(CIRCULAR["load"]), bcs))


def offset_circular(n: int, p: int, cut_fraction: float) -> BenchmarkInstance:
    """Circular shell whose disk radius exceeds the knot line nearest below
    ``0.7123`` by ``cut_fraction`` of a knot span (sliver cuts on the axes)."""
    lo, hi = CIRCULAR["bounds"]
    h = (hi - lo) / n
    k = int(np.floor((CIRCULAR["radius"] - lo) / h))
    return _build_circular(n, p, radius=lo + (k + cut_fraction) * h)


BENCHMARKS = {
    "scordelis_lo": BenchmarkDefinition(
        "scordelis_lo", "Scordelis-Lo roof, quarter model with symmetry trims", _build_scordelis,
        alpha=0.6, n_list=(6, 10, 20, 40), p_list=(3, 4, 5, 6), reference={"u_z": SCORDELIS["u_ref"]},
        measures=("energy", "sample"),
    ),
    "flat_shell": BenchmarkDefinition(
        "flat_shell", "Simply supported flat shell in R^3 with manufactured solution", _build_flat,
        alpha=0.4, n_list=(4, 8, 16, 32, 64), p_list=(3, 4, 5, 6),
        measures=("l2", "resultants", "residual", "energy"),
    ),
    "circular": BenchmarkDefinition(
        "circular", "Clamped circular shell on a curved map", _build_circular,
        alpha=0.4, n_list=(4, 8, 16, 32), p_list=(3, 4, 5, 6), reference={"energy": CIRCULAR["energy_ref"]},
        measures=("residual", "energy"),
    ),
}


def benchmark_scordelis() -> BenchmarkDefinition:
    return BENCHMARKS["scordelis_lo"]


def benchmark_flat_shell() -> BenchmarkDefinition:
    return BENCHMARKS["flat_shell"]


def benchmark_circular() -> BenchmarkDefinition:
    return BENCHMARKS["circular"]


def get_benchmark(name: str) -> BenchmarkDefinition:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
