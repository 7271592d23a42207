"""Choose the distance threshold t by watching the classification entropy.

Small t leaves near-duplicate support points whose groups split their
posterior mass, so entropy is high. Once t passes the spacing of those
duplicates entropy collapses; the first t where it stops improving is a
reasonable pick. Too large a t starts fusing genuine clusters.

    python3 demos/02_threshold_scan.py
"""

import numpy as np

from spglmm import DgpSpec, FitConfig, elbow_scan, simulate

spec = DgpSpec("poisson-intercept")
grid = [0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 2.0, 4.0]
runs = 5

curves = []
for r in range(runs):
    data = simulate(spec, np.random.default_rng(100 + r))
    curves.append(elbow_scan(data, FitConfig(family=spec.family, seed=r), grid))

print("    t   mean entropy   cluster counts")
for k, t in enumerate(grid):
    ent = np.mean([c[k].entropy for c in curves])
    ms = [c[k].m_hat for c in curves]
    print(f"{t:5.2f}   {ent:12.3e}   {ms}")
