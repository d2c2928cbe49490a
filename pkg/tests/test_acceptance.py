"""Acceptance criteria.  Each test prints one PASS/FAIL line (also collected in
the terminal summary) and then asserts at the stated tolerance."""
import functools
import warnings

import numpy as np
import pytest

from conftest import record_acceptance
from test_extended_bsplines import rational_oracle_worst_error
from test_tdc_shell import patch_test_strain_error, rigid_body_energy_ratio
from trimshell import benchmarks as B
from trimshell import verification as V


def _rate(study, p, name, n_allowed=None):
    h, e = study.series(p, name)
    if n_allowed is not None:
        keep = np.isin(np.rint(1.0 / h).astype(int), n_allowed)
        h, e = h[keep], e[keep]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return V.fit_rate(h, e)


def _wall(study, p_list, n_list):
    return sum(r.wall_time_s for r in study.reports if r.p in p_list and r.n in n_list)


def test_criterion_1_flat_shell_convergence(flat_study):
    checks, parts = [], []
    for p in (3, 4):
        for name, target in (("err_l2_u", p + 1), ("err_l2_n", p), ("err_l2_m", p - 1)):
            r = _rate(flat_study, p, name)
            checks.append(abs(r - target) <= 0.4)
            parts.append(f"p={p} {name[7:]} {r:.2f}/{target}")
    wall = _wall(flat_study, (3, 4), (4, 8, 16, 32))
    checks.append(wall < 300)
    ok = all(checks)
    record_acceptance("1", ok, "rates (observed/target, +-0.4): " + ", ".join(parts) + f"; runtime {wall:.0f}s")
    assert ok


def test_criterion_2_scordelis_lo(scordelis_study):
    ref = B.SCORDELIS["u_ref"]
    fine = [r for r in scordelis_study.select(4) if r.n == 40][0]
    dev = abs(abs(fine.sample) - ref) / ref
    seq = [abs(r.sample) for r in scordelis_study.select(3)]
    dist = [abs(v - ref) for v in seq]
    monotone = all(b < a for a, b in zip(dist, dist[1:]))
    wall = _wall(scordelis_study, (3, 4), (6, 10, 20, 40))
    ok = dev < 5e-3 and monotone and wall < 600
    record_acceptance("2", ok, f"|u_z|(n=40,p=4) = {abs(fine.sample):.6f} (deviation {dev:.2%}); "
                               f"p=3 sequence {', '.join(f'{v:.5f}' for v in seq)} monotone={monotone}; "
                               f"runtime {wall:.0f}s")
    assert ok


def test_criterion_3_circular_residual(circular_study):
    ns = (4, 8, 16)
    r3, r4, r5 = (_rate(circular_study, p, "err_residual", ns) for p in (3, 4, 5))
    wall = _wall(circular_study, (3, 4, 5), ns)
    ok = r3 < 0.3 and abs(r4 - 1) <= 0.4 and abs(r5 - 2) <= 0.5 and wall < 900
    record_acceptance("3", ok, f"residual rates p=3 {r3:.3f} (<0.3), p=4 {r4:.3f} (1+-0.4), "
                               f"p=5 {r5:.3f} (2+-0.5); runtime {wall:.0f}s")
    assert ok


def test_criterion_4_circular_energy(circular_study):
    ref = B.CIRCULAR["energy_ref"]
    fine = [r for r in circular_study.select(5) if r.n == 32][0]
    dev = abs(fine.energy - ref) / ref
    rates = {p: _rate(circular_study, p, "err_energy") for p in (3, 4)}
    ok = dev < 1e-3 and all(abs(rates[p] - (p - 1)) <= 0.4 for p in rates)
    record_acceptance("4", ok, f"energy(n=32,p=5) = {fine.energy:.4f} (deviation {dev:.3%}); energy-error rates "
                               + ", ".join(f"p={p} {r:.2f} (target {p - 1}+-0.4)" for p, r in rates.items()))
    assert ok


def test_criterion_5_condition_scaling(untrimmed_conditions):
    n = np.array(sorted(untrimmed_conditions))
    slope = -V.fit_rate(1.0 / n, [untrimmed_conditions[k] for k in n])
    fractions = [0.5, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    sweep = V.condition_sweep(functools.partial(B.offset_circular, 8, 3), fractions)
    stab = np.array([r["stabilized"] for r in sweep])
    unstab = np.array([r["unstabilized"] for r in sweep])
    spread = stab.max() / stab.min()
    ok = abs(slope - 4) <= 0.5 and spread < 10
    record_acceptance("5", ok, f"untrimmed slope {slope:.2f} (4+-0.5); stabilized estimate spread {spread:.2f}x "
                               f"over cut fractions 0.5..1e-6 (<10x; unstabilized {unstab[0]:.1e} -> {unstab[-1]:.1e})")
    assert ok


def test_criterion_6_quadrature_oracle(quadrature_orders):
    ok = all(res["area"] >= p + 1 and res["length"] >= p + 1 for p, res in quadrature_orders.items())
    record_acceptance("6", ok, ", ".join(f"p={p} area {res['area']:.2f} circumference {res['length']:.2f}"
                                         for p, res in quadrature_orders.items()) + " (>= p+1)")
    assert ok


def test_criterion_7_extension_reproduction():
    worst, failures = 0.0, []
    for name in ("scordelis_lo", "flat_shell", "circular"):
        d = B.get_benchmark(name)
        for p in (3, 4, 5, 6):
            for n in d.n_list[:2]:
                res = V.extension_reproduction_error(d.instance(n, p).problem.patch, d.alpha)
                err = max(res["coefficients"], res["values"])
                worst = max(worst, err)
                if err >= 1e-9:
                    failures.append(f"{name} p={p} n={n}: {err:.1e} (max weight {res['max_weight']:.1e})")
    oracle = rational_oracle_worst_error()
    ok = not failures and oracle < 1e-10
    record_acceptance("7", ok, f"worst reproduction error {worst:.1e} (<1e-9)"
                               + (f", failing: {'; '.join(failures)}" if failures else "")
                               + f"; rational oracle deviation {oracle:.1e} (<1e-10)")
    assert ok


def test_criterion_8_patch_and_rigid_body():
    patch = {p: patch_test_strain_error(p) for p in (3, 4, 5, 6)}
    rigid = {name: rigid_body_energy_ratio(name) for name in ("scordelis_lo", "flat_shell", "circular")}
    ok = all(v < 1e-9 for v in patch.values()) and all(v < 1e-10 for v in rigid.values())
    record_acceptance("8", ok, "patch-test strain errors " + ", ".join(f"p={p} {v:.1e}" for p, v in patch.items())
                               + " (<1e-9); rigid-body energy / (E t area) "
                               + ", ".join(f"{k} {v:.1e}" for k, v in rigid.items()) + " (<1e-10)")
    assert ok
