"""Estimation error shrinks as the number of assays grows.

For each m the simulation draws datasets with three unwanted factors, fits
with several choices of k, and records the relative error q of the removed
component. On a log-log scale the error falls with slope close to -1/2 once
k is at least the true dimension, and stalls when k is too small.

Pass ``--quick`` for a smaller grid.
"""

import sys

from ruviii import SimScenario, TrendSpec, run_grid, run_grid_variants

quick = "--quick" in sys.argv
m_values = [16, 32, 64] if quick else [16, 32, 64, 128]
reps = 5 if quick else 10

variants = {"k=1": ("m2/8", 1), "k=3": ("m2/8", 3), "k=m-s": ("m2/8", "max")}
results = run_grid_variants(SimScenario(seed=0), variants, m_values, reps)
results["PRPS k=3"] = run_grid(SimScenario(seed=0, trend=TrendSpec()), m_values, reps)

print("m     " + "  ".join(f"{name:>9}" for name in results))
for i, m in enumerate(m_values):
    print(f"{m:<5} " + "  ".join(f"{r.mean_q[i]:9.4f}" for r in results.values()))
for name, r in results.items():
    slope, se = r.slope()
    print(f"{name:<9} final slope {slope:+.3f} +/- {se:.3f}")
