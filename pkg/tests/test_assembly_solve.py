"""Assembly, stabilized direct solve and condition estimation."""
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from trimshell import benchmarks as B
from trimshell import shell as S
from trimshell import verification as V
from trimshell.assembly import (
    ConfigurationError,
    DofMap,
    ShellProblem,
    SingularSystemError,
    assemble,
    boundary_frames,
    estimate_condition,
    solve,
    stabilize_and_solve,
    write_triplets,
)
from trimshell.extension import EXTERIOR
from trimshell.quadrature import build_integration_mesh


def _quiet_solve(problem, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve(problem, **kw)


def test_dof_map_is_node_major_and_bijective():
    dm = DofMap(5, stable=np.array([1, 3]))
    all_dofs = dm.local_dofs(np.arange(5)[None])[0]
    assert np.array_equal(all_dofs, np.arange(15))
    assert dm.dof(2, 1) == 7
    assert np.array_equal(dm.stable_dofs, [3, 4, 5, 9, 10, 11])


def test_zero_load_and_homogeneous_data_give_zero_solution():
    inst = B.get_benchmark("circular").instance(4, 3)
    prob = inst.problem
    bcs = {tag: S.BoundaryCondition("clamped") for tag in prob.bcs}
    zero = ShellProblem(prob.patch, prob.material, np.zeros(3), bcs)
    sol = _quiet_solve(zero, alpha=0.4, condition=False)
    assert np.all(sol.system.f == 0.0)
    assert np.all(sol.coefficients == 0.0)


def test_unresolved_boundary_tag_is_a_configuration_error():
    prob = B.get_benchmark("circular").instance(4, 3).problem
    bad = ShellProblem(prob.patch, prob.material, prob.load, {})
    with pytest.raises(ConfigurationError):
        assemble(bad, build_integration_mesh(prob.patch))


@pytest.mark.parametrize("name", ["scordelis_lo", "flat_shell", "circular"])
def test_nitsche_block_is_antisymmetric_and_matches_reassembly(name, rng):
    inst = B.get_benchmark(name).instance(6, 3)
    prob = inst.problem
    mesh = build_integration_mesh(prob.patch)
    system = assemble(prob, mesh)
    Kn = system.K_nitsche
    assert abs(system.K - system.K_a - Kn).max() <= 1e-14 * abs(system.K).max()
    assert abs(Kn + Kn.T).max() < 1e-10 * abs(Kn).max()

    # term-by-term oracle: v^T K_N u as a boundary integral of global fields
    nb_ = prob.patch.basis.n_basis
    cu, cv = rng.normal(size=(2, nb_, 3))
    total = 0.0
    for tag in mesh.tags:
        bc = prob.bcs[tag]
        if bc.kind in (S.FREE, S.NEUMANN) and not bc.rotation:
            continue
        sel = mesh.boundary_mask(tag)
        geo, idx, bj = S.point_jets(prob.patch.surface, mesh.bxi[sel], 3, mesh.bspans[sel])
        t, nb, n, ds = boundary_frames(prob.patch, geo, mesh.btangent[sel])
        U, W = S.displacement_jets(idx, bj, cu), S.displacement_jets(idx, bj, cv)
        bu = S.boundary_quantities(U, geo, prob.material, t, nb)
        bv = S.boundary_quantities(W, geo, prob.material, t, nb)
        dens = S.nitsche_lhs(bu, bv, U[..., 0], W[..., 0], n, t, bc)
        total += float(np.sum(dens * mesh.bweights[sel] * ds))
    direct = cv.reshape(-1) @ (Kn @ cu.reshape(-1))
    assert direct == pytest.approx(total, rel=1e-10, abs=1e-12 * abs(Kn).max())


@pytest.mark.parametrize("p", [3, 4])
@pytest.mark.parametrize("name", ["scordelis_lo", "flat_shell", "circular"])
def test_energy_saturates_in_the_gauss_order(name, p):
    """Third grid level of each benchmark: g = p+1 and g = p+2 agree to 1e-8."""
    d = B.get_benchmark(name)
    n = d.n_list[2]
    energies = []
    for g in (p + 1, p + 2):
        sol = _quiet_solve(d.instance(n, p).problem, alpha=d.alpha, g=g, condition=False)
        energies.append(V.energy(sol))
    rel = abs(energies[1] - energies[0]) / abs(energies[1])
    assert rel < 1e-8, f"{name} n={n} p={p}: relative energy change {rel:.3e}"


def test_identity_extension_is_a_plain_solve(rng):
    K = sp.csr_matrix(np.diag(rng.uniform(1, 2, 6)) + 0.1 * rng.normal(size=(6, 6)))
    f = rng.normal(size=6)
    from trimshell.assembly import LinearSystem

    rep = stabilize_and_solve(LinearSystem(K, f, K, sp.csr_matrix((6, 6))), None)
    assert np.allclose(rep.u, np.linalg.solve(K.toarray(), f), rtol=1e-12)
    rep2 = stabilize_and_solve(LinearSystem(K, f, K, sp.csr_matrix((6, 6))), sp.identity(6, format="csr"))
    assert np.allclose(rep2.u, rep.u, rtol=1e-14)


def test_singular_system_reports_pivot():
    from trimshell.assembly import LinearSystem

    K = sp.csr_matrix(np.diag([1.0, 2.0, 0.0, 3.0]))
    with pytest.raises(SingularSystemError) as info:
        stabilize_and_solve(LinearSystem(K, np.ones(4), K, sp.csr_matrix((4, 4))))
    assert info.value.pivot == 2


def test_flat_shell_solve_residual_and_exterior_coefficients():
    sol = _quiet_solve(B.get_benchmark("flat_shell").instance(8, 3).problem, alpha=0.4)
    assert sol.report.residual < 1e-10
    ext = np.nonzero(sol.classification.labels == EXTERIOR)[0]
    assert len(ext) > 0
    assert np.all(sol.coefficients[ext] == 0.0)


def test_condition_of_identity():
    assert estimate_condition(np.eye(7)) == pytest.approx(1.0)
    assert estimate_condition(sp.identity(40, format="csr")) == pytest.approx(1.0)


def test_condition_of_diagonal():
    assert estimate_condition(np.diag([1.0, 1e-6])) == pytest.approx(1e6, rel=0.01)


def test_condition_of_singular_matrix_is_infinite():
    assert estimate_condition(np.array([[1.0, 2.0], [2.0, 4.0]])) == float("inf")


def test_condition_estimate_of_random_matrix(rng):
    for _ in range(5):
        A = rng.normal(size=(50, 50)) + 10 * np.eye(50)
        exact = np.linalg.cond(A, 1)
        est = estimate_condition(A)
        assert exact / 3 <= est <= exact * 3


def test_assembly_is_deterministic():
    prob = B.get_benchmark("circular").instance(6, 4).problem
    mesh = build_integration_mesh(prob.patch)
    a, b = assemble(prob, mesh), assemble(prob, mesh)
    for x, y in ((a.K, b.K), (a.K_a, b.K_a)):
        assert np.array_equal(x.indptr, y.indptr) and np.array_equal(x.indices, y.indices)
        assert np.array_equal(x.data, y.data)
    assert np.array_equal(a.f, b.f)


def test_clamped_circular_meshes_are_nonsingular(circular_study):
    for rep in circular_study.reports:
        assert rep.ok, (rep.n, rep.p, rep.failure)
        assert np.isfinite(rep.cond_est)
    for n in (4, 8):
        sol = _quiet_solve(B.get_benchmark("circular").instance(n, 6).problem, alpha=0.4)
        assert np.isfinite(sol.report.cond_est) and sol.report.residual < 1e-8


def test_condition_growth_on_untrimmed_flat_shell(untrimmed_conditions):
    """Log-log slope over three refinements (n = 4 -> 32)."""
    n = np.array(sorted(untrimmed_conditions))
    slope = V.fit_rate(1.0 / n, [untrimmed_conditions[k] for k in n])
    assert abs(-slope - 4.0) <= 0.5, f"slope {-slope:.3f}"


def test_triplet_dump(tmp_path):
    K = sp.csr_matrix(np.array([[1.0, 0.0], [0.5, -2.0]]))
    path = tmp_path / "k.txt"
    write_triplets(K, path)
    rows = [line.split() for line in path.read_text().splitlines()]
    back = sp.coo_matrix(([float(r[2]) for r in rows], ([int(r[0]) for r in rows], [int(r[1]) for r in rows])),
                         shape=(2, 2))
    assert np.array_equal(back.toarray(), K.toarray())
