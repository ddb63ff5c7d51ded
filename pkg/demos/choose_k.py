"""Pick the number of unwanted factors by scanning k.

The squared norm of the removed component grows quickly while k is below
the true dimension and only creeps up afterwards. ``k_scan`` reports the
norms and its argmax; with noise the argmax tends to overshoot, which costs
little (see convergence.py), while the elbow in the increments marks the
true dimension.
"""

import numpy as np

from ruviii import SimScenario, gen_dataset, k_scan

sc = SimScenario(m=64, k0=3, seed=3)
d, _ = gen_dataset(sc)
scan = k_scan(d, 8)

increments = np.diff(scan.norms_sq, prepend=0.0)
print("k  norm_sq        increment     status")
for k, (v, inc, st) in enumerate(zip(scan.norms_sq, increments, scan.status), start=1):
    print(f"{k:<2} {v:<14.1f} {inc:<13.1f} {st}")
print(f"k_hat = {scan.k_hat}, true k = {sc.k0}")
