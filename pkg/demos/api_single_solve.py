"""Solve one trimmed shell through the Python API and print the key numbers.

Usage: python3 demos/api_single_solve.py [benchmark] [n] [p]
"""
import sys
import warnings

import numpy as np

from trimshell import benchmarks as B
from trimshell import verification as V
from trimshell.assembly import solve


def main(name="scordelis_lo", n=10, p=4):
    d = B.get_benchmark(name)
    inst = d.instance(n, p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # alpha fallback notices
        sol = solve(inst.problem, alpha=d.alpha)
    rep = sol.report
    print(f"{name}: n={n} p={p} alpha={sol.alpha:g}")
    print(f"  stable dofs       {rep.n_stable_dofs}")
    print(f"  linear residual   {rep.residual:.2e}")
    print(f"  condition (1-norm) {rep.cond_est:.3e}")
    print(f"  strain energy     {V.energy(sol):.6f}")
    if inst.sample_xi is not None:
        uz = sol.displacement(np.array([inst.sample_xi]))[0, 2]
        print(f"  |u_z| at sample point {abs(uz):.6f}")
    if inst.exact is not None:
        u, nn, m = V.solution_l2_errors(sol, inst.exact)
        print(f"  relative L2 errors: u {u:.3e}  n {nn:.3e}  m {m:.3e}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(*(args[:1] + [int(a) for a in args[1:3]]))
