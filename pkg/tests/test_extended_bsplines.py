"""Extended B-splines: classification, de Boor-Fix weights and the extension matrix."""
import functools
from fractions import Fraction
from itertools import combinations
from math import prod

import numpy as np
import pytest
import scipy.sparse as sp
import sympy

from trimshell import benchmarks as B
from trimshell import extension as X
from trimshell.quadrature import build_integration_mesh
from trimshell.spline import KnotVector, SplineSurface, TensorBasis, basis_matrix, eval_basis, interpolate_control_net
from trimshell.trimming import TrimmedPatch, linear_levelset
from trimshell.verification import condition_sweep, extension_reproduction_error


def _plane_patch(kv_u, kv_v, levelsets):
    basis = TensorBasis(kv_u, kv_v)
    ctrl = interpolate_control_net(basis, lambda r, s: np.stack([r, s, 0 * r], axis=-1))
    return TrimmedPatch(SplineSurface(basis, ctrl), levelsets)


# --- classify_functions ---------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
def test_untrimmed_patch_all_stable(alpha):
    patch = B.untrimmed_flat_shell(4, 3).problem.patch
    cls = X.classify_functions(patch.basis, build_integration_mesh(patch), alpha)
    assert np.all(cls.labels == X.STABLE) and not cls.donor


def test_function_outside_visible_domain_is_exterior():
    patch = B.get_benchmark("circular").instance(8, 3).problem.patch
    cls = X.classify_functions(patch.basis, build_integration_mesh(patch), 0.4)
    m1, m2 = patch.basis.shape
    corners = [0, m2 - 1, (m1 - 1) * m2, m1 * m2 - 1]
    assert all(cls.labels[A] == X.EXTERIOR for A in corners)


def test_quartic_end_function_with_small_cut_is_degenerate():
    """1D analog: trim 10% into the last span; fractions from interval lengths."""
    p, n = 4, 5
    kv = KnotVector.uniform(0.0, 1.0, n, p)
    r_trim = 0.8 + 0.1 * 0.2
    patch = _plane_patch(kv, KnotVector.uniform(0.0, 1.0, 1, 1), [linear_levelset(-1.0, 0.0, r_trim)])
    cls = X.classify_functions(patch.basis, build_integration_mesh(patch), 0.5)
    knots = [Fraction(k, n) for k in [0] * p + list(range(n + 1)) + [n] * p]
    t = Fraction(r_trim).limit_denominator(1000)
    for i in range(kv.n_basis):
        a, b = knots[i], knots[i + p + 1]
        frac = float((min(b, t) - a) / (b - a)) if t > a else 0.0
        for j in range(2):  # the s-direction is untrimmed: identical rows
            A = i * 2 + j
            assert cls.fraction[A] == pytest.approx(frac, abs=1e-12)
            assert cls.labels[A] == (X.STABLE if frac >= 0.5 else X.DEGENERATE)
    assert cls.labels[(kv.n_basis - 1) * 2] == X.DEGENERATE


def test_invalid_alpha_rejected():
    patch = B.untrimmed_flat_shell(2, 3).problem.patch
    with pytest.raises(ValueError):
        X.classify_functions(patch.basis, build_integration_mesh(patch), 0.0)


def test_classification_csv(tmp_path):
    patch = B.get_benchmark("circular").instance(4, 3).problem.patch
    cls = X.classify_functions(patch.basis, build_integration_mesh(patch), 0.4)
    path = tmp_path / "cls.csv"
    cls.dump_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "function,class,fraction,donor_i,donor_j" and len(lines) == 1 + patch.basis.n_basis


# --- power_coeffs --------------------------------------------------------------------------------


def test_power_coeffs_linear_hats():
    A = X.power_coeffs(KnotVector([0, 0, 1, 2, 2], 1), 1)
    assert np.allclose(A[:, 0], [1, -1]) and np.allclose(A[:, 1], [0, 1])


def test_power_coeffs_partition_of_unity(rng):
    kv = KnotVector([0, 0, 0, 0, 0.4, 1.3, 2, 3.1, 3.1, 3.1, 3.1], 3)
    for s in kv.spans():
        A = X.power_coeffs(kv, s)
        r = rng.uniform(0, 1, 20)
        V = r[:, None] ** np.arange(4)[None, :]
        assert np.allclose((V @ A).sum(1), 1.0, atol=1e-13)


def test_power_coeffs_match_vandermonde_fit():
    kv = KnotVector([0, 0, 0, 0, 1, 2, 3, 4, 4, 4, 4], 3)
    s = 5  # span [2, 3)
    r = np.array([0.1, 0.35, 0.6, 0.85])
    vals = eval_basis(kv, 2.0 + r, 0, span=np.full(4, s))[:, 0]
    V = r[:, None] ** np.arange(4)[None, :]
    assert np.allclose(X.power_coeffs(kv, s), np.linalg.solve(V, vals), atol=1e-12)


# --- newton_poly_coeffs ------------------------------------------------------------------------------


def test_newton_coefficients_small_cases():
    assert np.allclose(X.newton_poly_coeffs([0.5]), [-0.5, 1.0])
    assert np.allclose(X.newton_poly_coeffs([0.0, 1.0]), [0.0, -1.0, 1.0])


def test_newton_coefficients_match_elementary_symmetric_sums(rng):
    r = rng.uniform(-2, 3, 4)
    beta = X.newton_poly_coeffs(r)
    for k in range(5):
        e = sum(prod(c) for c in combinations(r, 4 - k))
        assert beta[k] == pytest.approx((-1) ** (4 - k) * e, abs=1e-12)


# --- extrapolation_weights ---------------------------------------------------------------------------


def test_self_extension_is_identity(rng):
    for p in (1, 2, 3, 4, 5):
        kv = KnotVector(np.r_[[0.0] * (p + 1), np.sort(rng.uniform(0, 1, 5)), [1.0] * (p + 1)], p)
        for s in kv.spans():
            assert np.allclose(X.extrapolation_weights(kv, s, s), np.eye(p + 1), atol=1e-10)


def test_extension_reproduces_polynomials_on_trimmed_span(rng):
    for p in (2, 3, 4, 5):
        kv = KnotVector.uniform(0.0, 1.0, 6, p)
        spans = kv.spans()
        c = np.array([(-1) ** k * (k + 1) for k in range(p + 1)], dtype=float)
        f = np.polynomial.Polynomial(c)
        # B-spline coefficients of f by collocation at the Greville points
        coef = np.linalg.solve(basis_matrix(kv, kv.greville()), f(kv.greville()))
        for s, st in ((spans[1], spans[-1]), (spans[-2], spans[0])):
            e = X.extrapolation_weights(kv, s, st)
            ct = e.T @ coef[s - p : s + 1]
            u = rng.uniform(kv.knots[st], kv.knots[st + 1], 30)
            vals = eval_basis(kv, u, 0, span=np.full(30, st))[:, 0] @ ct
            assert np.max(np.abs(vals - f(u))) < 1e-10


def test_quadratic_weights_match_polynomial_matching():
    kv = KnotVector([0, 0, 0, 1, 2, 3, 3, 3], 2)
    s, st = 3, 4  # donor [1, 2), trimmed [2, 3)
    u = np.array([2.1, 2.5, 2.9])
    Bt = eval_basis(kv, u, 0, span=np.full(3, st))[:, 0]  # pieces on the trimmed span
    Bs = eval_basis(kv, u, 0, span=np.full(3, s))[:, 0]   # donor pieces, extended
    assert np.allclose(X.extrapolation_weights(kv, s, st), np.linalg.solve(Bt, Bs).T, atol=1e-13)


def _piece(knots, p, s, i, x):
    """Exact polynomial piece of B_{i,p} on span s, evaluated at rational x."""
    def N(i, k):
        if k == 0:
            return Fraction(int(i == s))
        out = Fraction(0)
        if knots[i + k] != knots[i]:
            out += (x - knots[i]) / (knots[i + k] - knots[i]) * N(i, k - 1)
        if knots[i + k + 1] != knots[i + 1]:
            out += (knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1]) * N(i + 1, k - 1)
        return out
    return N(i, p)


def rational_oracle_worst_error(n_cases: int = 50, seed: int = 1) -> float:
    """Largest deviation of the extrapolation weights from direct polynomial
    matching in exact rational arithmetic over random 1D knot configurations."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        p = int(rng.integers(1, 6))
        n = int(rng.integers(p + 1, p + 6))
        gaps = [Fraction(int(g), 8) for g in rng.integers(4, 13, n)]
        knots = [Fraction(0)] * (p + 1) + [sum(gaps[:k]) for k in range(1, n)] + [sum(gaps)] * (p + 1)
        kv = KnotVector(np.array([float(k) for k in knots]), p)
        s, st = (int(rng.choice(kv.spans())) for _ in range(2))
        xs = [knots[st] + (knots[st + 1] - knots[st]) * Fraction(k, p) for k in range(p + 1)]
        Bt = sympy.Matrix([[_piece(knots, p, st, st - p + b, x) for b in range(p + 1)] for x in xs])
        Bs = sympy.Matrix([[_piece(knots, p, s, s - p + a, x) for a in range(p + 1)] for x in xs])
        exact = np.array(Bt.LUsolve(Bs), dtype=float).T
        worst = max(worst, np.abs(exact - X.extrapolation_weights(kv, s, st)).max())
    return worst


def test_weights_match_exact_rational_oracle_on_random_configurations():
    assert rational_oracle_worst_error() < 1e-10


# --- build_extension_matrix ---------------------------------------------------------------------------


def test_untrimmed_extension_is_identity():
    patch = B.untrimmed_flat_shell(4, 3).problem.patch
    basis = patch.basis
    E = X.build_extension_matrix(X.classify_functions(basis, build_integration_mesh(patch), 0.5), basis)
    assert (E - sp.identity(basis.n_basis)).count_nonzero() == 0


def test_extension_matrix_structure():
    patch = B.get_benchmark("circular").instance(8, 4).problem.patch
    cls = X.classify_functions(patch.basis, build_integration_mesh(patch), 0.4)
    E = X.build_extension_matrix(cls, patch.basis).tocsr()
    assert E.shape == (patch.basis.n_basis, len(cls.stable))
    nnz = np.diff(E.indptr)
    assert np.all(nnz[cls.exterior] == 0)
    assert np.all(nnz[cls.degenerate] > 0)
    assert np.allclose(E[cls.stable].toarray(), np.eye(len(cls.stable)))


@pytest.mark.parametrize("name", ["scordelis_lo", "flat_shell", "circular"])
@pytest.mark.parametrize("p", [3, 4, 5, 6])
def test_extended_basis_reproduces_monomials(name, p):
    d = B.get_benchmark(name)
    for n in d.n_list[:2]:
        res = extension_reproduction_error(d.instance(n, p).problem.patch, d.alpha)
        assert res["coefficients"] < 1e-9, (n, res)
        assert res["values"] < 1e-9, (n, res)


# --- apply_extension --------------------------------------------------------------------------------


def test_identity_extension_leaves_system_unchanged(rng):
    K = sp.random(12, 12, density=0.4, random_state=3, format="csr") + sp.identity(12)
    f = rng.normal(size=12)
    Kst, fst = X.apply_extension(K, f, sp.identity(12, format="csr"))
    assert abs(Kst - K).max() == 0 and np.array_equal(fst, f)
    with pytest.raises(ValueError):
        X.apply_extension(K, f, sp.identity(11))


def _poisson_1d(kv, length, E=None):
    """-u'' = 6x on [0, length], u(0) = 0 (first function removed), u'(length) = g."""
    exact = lambda x: 2 * x - x**3  # noqa: E731
    g = 2 - 3 * length**2
    p = kv.degree
    xg, wg = np.polynomial.legendre.leggauss(p + 2)
    n = kv.n_basis
    K = np.zeros((n, n))
    f = np.zeros(n)
    for s in kv.spans():
        a, b = kv.knots[s], min(kv.knots[s + 1], length)
        if b <= a:
            continue
        x = 0.5 * (a + b) + 0.5 * (b - a) * xg
        w = 0.5 * (b - a) * wg
        d = eval_basis(kv, x, 1, span=np.full(len(x), s))
        idx = np.arange(s - p, s + 1)
        K[np.ix_(idx, idx)] += np.einsum("q,qa,qb->ab", w, d[:, 1], d[:, 1])
        f[idx] += np.einsum("q,qa->a", w * 6 * x, d[:, 0])
    f += g * basis_matrix(kv, length)[0]
    Efull = np.eye(n) if E is None else E
    Efull = Efull[:, 1:] if E is None else Efull
    Efull[0] = 0.0  # homogeneous Dirichlet at x = 0
    keep = np.abs(Efull).sum(0) > 0
    Efull = Efull[:, keep]
    u_st = np.linalg.solve(Efull.T @ K @ Efull, Efull.T @ f)
    u = Efull @ u_st
    xs = np.linspace(0, length, 41)
    return basis_matrix(kv, xs) @ u, exact(xs)


def test_trimmed_poisson_with_extension_matches_boundary_fitted():
    p, n = 3, 5
    length = 0.82  # 10% into the last span
    fitted, exact = _poisson_1d(KnotVector.uniform(0.0, length, n, p), length)
    kv = KnotVector.uniform(0.0, 1.0, n, p)
    # extend the last (degenerate) function from the last all-stable span
    E = np.eye(kv.n_basis)[:, :-1]
    last = kv.n_basis - 1
    donor = kv.spans()[-2]
    e = X.extrapolation_weights(kv, donor, kv.spans()[-1])
    E[last, donor - p : donor + 1] = e[:, -1]
    trimmed, _ = _poisson_1d(kv, length, E)
    assert np.max(np.abs(trimmed - fitted)) < 1e-8
    assert np.max(np.abs(fitted - exact)) < 1e-10


def test_solution_vanishes_on_exterior_functions():
    from trimshell.assembly import solve

    inst = B.get_benchmark("circular").instance(4, 3)
    sol = solve(inst.problem, alpha=0.4, condition=False)
    coef = sol.coefficients.reshape(-1, 3)
    assert np.all(coef[sol.classification.exterior] == 0.0)


# --- stability ------------------------------------------------------------------------------------------


def test_conditioning_under_sliver_cuts():
    fractions = [0.5, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    sweep = condition_sweep(functools.partial(B.offset_circular, 8, 3), fractions)
    stab = np.array([r["stabilized"] for r in sweep])
    unstab = np.array([r["unstabilized"] for r in sweep])
    assert np.max(stab) / stab[0] < 10.0
    assert unstab[-1] / unstab[0] >= 1e3


@pytest.mark.parametrize("p", [3, 4])
def test_error_insensitive_to_alpha(flat_study, p):
    from trimshell.verification import run_cell

    at_04 = [r for r in flat_study.select(p) if r.n == 32][0]
    at_06 = run_cell(B.get_benchmark("flat_shell"), 32, p, alpha=0.6)
    for name in ("err_l2_u", "err_l2_n", "err_l2_m"):
        a, b = getattr(at_04, name), getattr(at_06, name)
        assert abs(a - b) / max(a, b) < 0.05, (name, a, b)
