"""Error measures, convergence rates and convergence studies.

The array-level functions (:func:`l2_error`, :func:`resultant_l2_errors`,
:func:`residual_error`) work on values at quadrature points; the
``solution_*`` wrappers evaluate those values for a solved problem.
"""
import csv
import math
import time
import traceback
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import shell
from .assembly import Solution, solve

CSV_COLUMNS = (
    "run_id", "benchmark", "p", "n", "alpha", "dofs", "err_l2_u", "err_l2_n", "err_l2_m",
    "err_residual", "energy", "err_energy", "cond_est", "wall_time_s",
)


class ErrorValue(float):
    """A float carrying a flag that the relative norm fell back to absolute."""

    def __new__(cls, value, fallback: bool = False):
        obj = super().__new__(cls, value)
        obj.fallback = fallback
        return obj


def _relative(num2: float, den2: float) -> ErrorValue:
    if den2 > 0:
        return ErrorValue(math.sqrt(max(num2, 0.0) / den2))
    return ErrorValue(math.sqrt(max(num2, 0.0)), fallback=True)


def l2_error(u_h, u_ex, weights) -> ErrorValue:
    """Relative L2 error ``sqrt(int |u_h - u_ex|^2 / int |u_ex|^2)``.

    ``u_h`` and ``u_ex`` hold values ``(N, ...)`` at quadrature points with
    integration weights ``(N,)`` (including the area element).  A zero
    reference returns the absolute norm with ``fallback`` set.
    """
    u_h = np.asarray(u_h, dtype=float)
    u_ex = np.asarray(u_ex, dtype=float)
    w = np.asarray(weights, dtype=float)
    d = (u_h - u_ex).reshape(len(w), -1)
    r = u_ex.reshape(len(w), -1)
    return _relative(float(w @ (d**2).sum(1)), float(w @ (r**2).sum(1)))


def resultant_l2_errors(n_h, m_h, n_ex, m_ex, weights) -> tuple:
    """Relative L2 errors of ``n_real`` and ``m`` (Frobenius norms)."""
    return l2_error(n_h, n_ex, weights), l2_error(m_h, m_ex, weights)


def residual_error(residual, f, weights) -> ErrorValue:
    """``sqrt(int |residual|^2 / int |f|^2)``; ``0/0`` gives 0 with ``fallback``."""
    w = np.asarray(weights, dtype=float)
    r = np.asarray(residual, dtype=float).reshape(len(w), -1)
    f = np.asarray(f, dtype=float).reshape(len(w), -1)
    return _relative(float(w @ (r**2).sum(1)), float(w @ (f**2).sum(1)))


def energy_error(energy_h: float, energy_ref: float) -> float:
    """``|E_h - E_ref| / |E_ref|``."""
    return abs(energy_h - energy_ref) / abs(energy_ref)


def fit_rate(h, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    Non-positive (or non-finite) errors are dropped with a warning; at least
    two points must remain.
    """
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = np.isfinite(e) & (e > 0) & np.isfinite(h) & (h > 0)
    if not np.all(ok):
        warnings.warn(f"dropping {int((~ok).sum())} non-positive error values from the rate fit", RuntimeWarning)
    if ok.sum() < 2:
        raise ValueError("rate fit needs at least two positive points")
    return float(np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)[0])


# --- solution-level evaluation --------------------------------------------------------


def _interior(solution: Solution, degree: int, chunk: int = 2048):
    """Yield ``(xi, geo, U, w)`` over chunks of interior quadrature points."""
    mesh = solution.mesh
    for c0 in range(0, mesh.n_interior, chunk):
        sl = slice(c0, min(c0 + chunk, mesh.n_interior))
        geo, U = solution.displacement_jets(mesh.xi[sl], degree, mesh.spans[sl])
        yield mesh.xi[sl], geo, U, mesh.weights[sl] * geo.area


def energy(solution: Solution) -> float:
    """Stored elastic energy ``1/2 int (eps_M : n_eff + eps_B : m) dA``."""
    mat = solution.problem.material
    return 0.5 * sum(float(w @ shell.energy_density(geo, U, mat)) for _, geo, U, w in _interior(solution, 2))


def solution_l2_errors(solution: Solution, exact) -> tuple:
    """Relative L2 errors of displacement, ``n_real`` and ``m`` against ``exact``."""
    mat = solution.problem.material
    acc = np.zeros((3, 2))
    for xi, geo, U, w in _interior(solution, 2):
        Ue = exact.jets(xi, 2)
        rh = shell.stress_resultants(shell.kinematics(U, geo), geo, mat)
        re = shell.stress_resultants(shell.kinematics(Ue, geo), geo, mat)
        pairs = ((U[..., 0], Ue[..., 0]), (rh.n_real[..., 0], re.n_real[..., 0]), (rh.m[..., 0], re.m[..., 0]))
        for k, (a, b) in enumerate(pairs):
            acc[k, 0] += w @ ((a - b) ** 2).reshape(len(w), -1).sum(1)
            acc[k, 1] += w @ (b**2).reshape(len(w), -1).sum(1)
    return tuple(_relative(*acc[k]) for k in range(3))


def solution_residual_error(solution: Solution) -> ErrorValue:
    """Relative strong-form residual of the discrete solution."""
    prob = solution.problem
    num = den = 0.0
    for _, geo, U, w in _interior(solution, 4, chunk=512):
        f = prob.load_at(geo.value("x"))
        r = shell.strong_residual_jets(U, geo, prob.material) + f
        num += float(w @ (r**2).sum(1))
        den += float(w @ (f**2).sum(1))
    return _relative(num, den)


# --- studies ---------------------------------------------------------------------------------


@dataclass
class ErrorReport:
    """Errors and diagnostics of one ``(n, p)`` cell of a study."""

    benchmark: str
    n: int
    p: int
    alpha: float
    dofs: int = 0
    err_l2_u: float = float("nan")
    err_l2_n: float = float("nan")
    err_l2_m: float = float("nan")
    err_residual: float = float("nan")
    energy: float = float("nan")
    err_energy: float = float("nan")
    cond_est: float = float("nan")
    wall_time_s: float = float("nan")
    sample: float = float("nan")
    alpha_used: float = float("nan")
    flags: list = field(default_factory=list)
    failure: str = ""

    @property
    def ok(self) -> bool:
        return not self.failure


@dataclass
class StudyResult:
    """Reports over an ``(n, p)`` grid plus fitted rates per degree."""

    benchmark: str
    reports: list
    rates: dict = field(default_factory=dict)

    def select(self, p: int) -> list:
        return sorted((r for r in self.reports if r.p == p and r.ok), key=lambda r: r.n)

    def series(self, p: int, name: str) -> tuple:
        rs = self.select(p)
        return np.array([1.0 / r.n for r in rs]), np.array([getattr(r, name) for r in rs])


RATE_MEASURES = ("err_l2_u", "err_l2_n", "err_l2_m", "err_residual", "err_energy")


def _fit_rates(study: StudyResult) -> dict:
    rates = {}
    for p in sorted({r.p for r in study.reports}):
        for name in RATE_MEASURES + ("cond_est",):
            h, e = study.series(p, name)
            ok = np.isfinite(e) & (e > 0)
            if ok.sum() >= 3:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    rates[(p, name)] = fit_rate(h[ok], e[ok])
    return rates


def evaluate(definition, instance, solution: Solution, measures=None) -> dict:
    """Error measures applicable to ``definition`` for a solved instance."""
    out = {}
    measures = set(definition.measures if measures is None else measures)
    if instance.exact is not None and {"l2", "resultants"} & measures:
        out["err_l2_u"], out["err_l2_n"], out["err_l2_m"] = solution_l2_errors(solution, instance.exact)
    if "residual" in measures:
        out["err_residual"] = solution_residual_error(solution)
    if "energy" in measures:
        out["energy"] = energy(solution)
        ref = definition.reference.get("energy")
        if ref is not None:
            out["err_energy"] = energy_error(out["energy"], ref)
    if "sample" in measures and instance.sample_xi is not None:
        out["sample"] = float(solution.displacement(np.array([instance.sample_xi]))[0, 2])
    return out


def run_cell(definition, n: int, p: int, alpha: float | None = None, condition: bool = True,
             measures=None, q: int = 3, g: int | None = None) -> ErrorReport:
    """Solve one ``(n, p)`` cell; failures are recorded, not raised."""
    alpha = definition.alpha if alpha is None else alpha
    rep = ErrorReport(definition.name, n, p, alpha)
    t0 = time.perf_counter()
    try:
        inst = definition.instance(n, p)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sol = solve(inst.problem, alpha=alpha, condition=condition, q=q, g=g)
        rep.flags.extend(str(w.message) for w in caught)
        rep.alpha_used = sol.alpha
        rep.dofs = sol.report.n_stable_dofs
        rep.cond_est = sol.report.cond_est
        for k, v in evaluate(definition, inst, sol, measures).items():
            setattr(rep, k, float(v))
            if getattr(v, "fallback", False):
                rep.flags.append(f"{k}: zero reference, absolute norm")
    except Exception as exc:  # a failing cell must not abort the study
        rep.failure = f"{type(exc).__name__}: {exc}"
        rep.flags.append(traceback.format_exception_only(type(exc), exc)[-1].strip())
    rep.wall_time_s = time.perf_counter() - t0
    return rep


def run_study(definition, n_list, p_list, alpha: float | None = None, condition: bool = True,
              measures=None, q: int = 3, g: int | None = None, progress=None, workers: int = 1) -> StudyResult:
    """Solve all ``(n, p)`` combinations and fit convergence rates.

    Cells are independent; with ``workers > 1`` they run in a process pool
    (the definition must then be picklable).  Reports keep the ``p``-major,
    ``n``-minor order regardless of completion order.
    """
    if not len(n_list) or not len(p_list):
        raise ValueError("n-list and p-list must be non-empty")
    cells = [(int(n), int(p)) for p in p_list for n in n_list]
    args = (alpha, condition, measures, q, g)
    if workers > 1 and len(cells) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            futures = [pool.submit(run_cell, definition, n, p, *args) for n, p in cells]
            reports = []
            for fut in futures:
                reports.append(fut.result())
                if progress is not None:
                    progress(reports[-1])
    else:
        reports = []
        for n, p in cells:
            reports.append(run_cell(definition, n, p, *args))
            if progress is not None:
                progress(reports[-1])
    study = StudyResult(definition.name, reports)
    study.rates = _fit_rates(study)
    return study


def write_csv(study: StudyResult, path, run_id: str = "") -> None:
    """Write one row per cell with the columns in :data:`CSV_COLUMNS`."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rep in study.reports:
            d = asdict(rep)
            row = [run_id, study.benchmark] + [d[c] for c in CSV_COLUMNS[2:]]
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def read_csv(path) -> list:
    """Rows of a study CSV as dictionaries with numeric fields converted."""
    ints = {"p", "n", "dofs"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: (int(v) if k in ints else float(v)) if k not in ("run_id", "benchmark") else v
                        for k, v in row.items()})
    return out


__all__ = [
    "CSV_COLUMNS", "ErrorValue", "l2_error", "resultant_l2_errors", "residual_error", "energy_error", "fit_rate",
    "energy", "solution_l2_errors", "solution_residual_error", "ErrorReport", "StudyResult", "evaluate",
    "run_cell", "run_study", "write_csv", "read_csv", "disk_quadrature_errors", "quadrature_selftest",
    "extension_reproduction_error", "condition_sweep",
]


# --- quadrature self-test ---------------------------------------------------------------


def disk_quadrature_errors(n: int, p: int, radius: float = 0.7123, half_width: float = 0.875,
                           q: int = 3) -> tuple:
    """Relative errors of the integrated disk area and circumference.

    A disk of ``radius`` centred in the square ``[-half_width, half_width]^2``
    with ``n x n`` knot spans of degree ``p`` is integrated in parameter space
    and compared with ``pi r^2`` and ``2 pi r``.
    """
    from .quadrature import build_integration_mesh
    from .spline import KnotVector, SplineSurface, TensorBasis, interpolate_control_net
    from .trimming import TrimmedPatch, disk_levelset

    kv = KnotVector.uniform(-half_width, half_width, n, p)
    basis = TensorBasis(kv, kv)
    ctrl = interpolate_control_net(basis, lambda r, s: np.stack([r, s, 0 * r], axis=-1))
    patch = TrimmedPatch(SplineSurface(basis, ctrl), [disk_levelset(radius, name="disk")])
    mesh = build_integration_mesh(patch, p=p, q=q)
    area = mesh.parameter_area()
    length = mesh.parameter_length()
    return abs(area - math.pi * radius**2) / (math.pi * radius**2), abs(length - 2 * math.pi * radius) / (2 * math.pi * radius)


def quadrature_selftest(p_list=(3, 4, 5), n_list=(16, 32, 64), **kwargs) -> dict:
    """Observed convergence orders of disk area and circumference per degree.

    Returns ``{p: {"area": rate, "length": rate, "errors": [(n, e_area, e_length), ...]}}``.
    """
    out = {}
    for p in p_list:
        errs = [(n, *disk_quadrature_errors(n, p, **kwargs)) for n in n_list]
        h = 1.0 / np.array(n_list, dtype=float)
        out[p] = {
            "area": fit_rate(h, [e[1] for e in errs]),
            "length": fit_rate(h, [e[2] for e in errs]),
            "errors": errs,
        }
    return out


# --- polynomial reproduction of the extended basis -------------------------------------------


def extension_reproduction_error(patch, alpha: float = 0.5, mesh=None) -> dict:
    """How well the extended basis reproduces the monomials ``r^a s^b``, ``a, b <= p``.

    Each monomial (in coordinates scaled to the unit square) is represented in
    the non-rational B-spline basis by Greville interpolation, divided by the
    NURBS weights, restricted to the stable functions and extended again.

    Returns
    -------
    dict
        ``coefficients``: max over monomials of the extended-minus-exact
        coefficient error on non-exterior functions, relative to the largest
        coefficient; ``values``: max relative error of the extended
        representation at the interior quadrature points of the visible
        domain; ``alpha``: the threshold actually used (lowered to the largest
        feasible value when no all-stable span exists); ``max_weight``: the
        largest extension-matrix entry.
    """
    from .extension import (EXTERIOR, UnsolvableConfigurationError, build_extension_matrix,
                            classify_functions, max_feasible_alpha)
    from .quadrature import build_integration_mesh
    from .spline import TensorBasis, interpolate_control_net

    basis = patch.basis
    if mesh is None:
        mesh = build_integration_mesh(patch)
    try:
        cls = classify_functions(basis, mesh, alpha)
    except UnsolvableConfigurationError:
        alpha = max_feasible_alpha(basis, mesh)
        cls = classify_functions(basis, mesh, alpha)
    E = build_extension_matrix(cls, basis)
    plain = TensorBasis(basis.kv_u, basis.kv_v)
    w = np.ones(basis.n_basis) if basis.weights is None else basis.weights.reshape(-1)
    idx, ders = plain.eval(mesh.xi, 0)
    N = ders[:, :, 0, 0]
    r0, r1, s0, s1 = basis.bounds
    visible = cls.labels != EXTERIOR
    err_c = err_v = 0.0
    p1, p2 = basis.degrees
    for a in range(p1 + 1):
        for b in range(p2 + 1):
            def mono(r, s, a=a, b=b):
                return ((r - r0) / (r1 - r0)) ** a * ((s - s0) / (s1 - s0)) ** b

            c = interpolate_control_net(plain, mono).reshape(-1) / w
            u = E @ c[cls.stable]
            err_c = max(err_c, float(np.abs(u[visible] - c[visible]).max() / np.abs(c).max()))
            exact = mono(mesh.xi[:, 0], mesh.xi[:, 1])
            approx = np.einsum("nb,nb->n", N, (u * w)[idx])
            err_v = max(err_v, float(np.abs(approx - exact).max() / np.abs(exact).max()))
    return {"coefficients": err_c, "values": err_v, "alpha": alpha, "max_weight": float(abs(E).max())}


# --- conditioning under sliver cuts -------------------------------------------------------------


def condition_sweep(factory, cut_fractions, alpha: float = 0.4) -> list:
    """Condition estimates of the stabilized and unstabilized systems.

    Parameters
    ----------
    factory : callable
        ``factory(cut_fraction) -> BenchmarkInstance`` (e.g. a partial of
        :func:`trimshell.benchmarks.offset_circular`).
    cut_fractions : sequence of float
        Fraction of a knot span left visible beyond a knot line.

    Returns
    -------
    list of dict
        Per fraction: ``cut_fraction``, ``stabilized`` (extended-B-spline
        system) and ``unstabilized`` (all functions with visible support kept;
        ``inf`` when numerically singular).
    """
    import scipy.sparse as sp

    from .assembly import assemble, estimate_condition
    from .extension import EXTERIOR, apply_extension, classify_functions, vector_extension
    from .quadrature import build_integration_mesh

    out = []
    for cf in cut_fractions:
        inst = factory(cf)
        mesh = build_integration_mesh(inst.problem.patch)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sol = solve(inst.problem, alpha=alpha, mesh=mesh)
        basis = inst.problem.patch.basis
        cls = classify_functions(basis, mesh, np.finfo(float).tiny)
        keep = np.nonzero(cls.labels != EXTERIOR)[0]
        E = sp.csr_matrix((np.ones(len(keep)), (keep, np.arange(len(keep)))), shape=(basis.n_basis, len(keep)))
        K, f = apply_extension(sol.system.K, sol.system.f, vector_extension(E))
        out.append({"cut_fraction": float(cf), "stabilized": float(sol.report.cond_est),
                    "unstabilized": estimate_condition(K)})
    return out
