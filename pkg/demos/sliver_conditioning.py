"""Condition number of the clamped circular plate as a trimming boundary is
moved towards a knot line, with and without extended B-splines."""
import functools

from trimshell import benchmarks as B
from trimshell import verification as V

fractions = [0.5, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
rows = V.condition_sweep(functools.partial(B.offset_circular, 8, 3), fractions)
print(f"{'cut fraction':>12} {'stabilized':>12} {'unstabilized':>13}")
for r in rows:
    print(f"{r['cut_fraction']:12.0e} {r['stabilized']:12.3e} {r['unstabilized']:13.3e}")
